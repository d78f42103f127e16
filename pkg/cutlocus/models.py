import logging

from functools import cached_property
from typing import Dict, List

from cutlocus.config import RunConfig
from cutlocus.cut import CutLocus, DistanceOracle, build_distance_oracle, classify_cut_locus, compute_cut_times
from cutlocus.geometry.flow import GeodesicMap, Ray, geodesic_map
from cutlocus.geometry.focal import analyze_records, focal_times
from cutlocus.geometry.schema import FocalRecord, RayKey
from cutlocus.scenarios import Scenario, get_scenario, scenario_from_config


def scenario_of(config: RunConfig) -> Scenario:
    if config.inline:
        return scenario_from_config(config.inline)
    return get_scenario(config.scenario, **config.scenario_params)


class ScenarioRun:
    """A helper class holding one scenario at the resolution of a run config.

    The ray family, focal records, oracle and cut locus are built on first use
    and shared by every stage that needs them.
    """

    def __init__(self, scenario: Scenario, config: RunConfig):
        self.scenario = scenario
        self.config = config
        self.h = config.grid_h
        self._focal: Dict[RayKey, List[FocalRecord]] = {}

    @classmethod
    def from_config(cls, config: RunConfig) -> "ScenarioRun":
        return cls(scenario_of(config), config)

    @property
    def metric(self):
        return self.scenario.metric

    @property
    def boundary(self):
        return self.scenario.boundary

    def tolerance(self, name: str) -> float:
        return self.config.tolerance(name)

    @cached_property
    def gmap(self) -> GeodesicMap:
        return geodesic_map(self.metric, self.boundary)

    @cached_property
    def rays(self) -> List[Ray]:
        return self.gmap.family(self.config.rays)

    def focal_of(self, ray: Ray) -> List[FocalRecord]:
        if ray.key not in self._focal:
            self._focal[ray.key] = focal_times(
                ray, tol=self.tolerance("rank_tol"), grid_step=self.tolerance("focal_grid_step")
            )
        return self._focal[ray.key]

    @cached_property
    def raw_focal(self) -> Dict[RayKey, List[FocalRecord]]:
        return {ray.key: self.focal_of(ray) for ray in self.rays}

    @cached_property
    def focal(self) -> Dict[RayKey, List[FocalRecord]]:
        """Focal records of the family with their A2 flags and order-2 types filled in."""
        analyzed = {}
        for key, records in self.raw_focal.items():
            analyzed[key] = analyze_records(
                self.metric, self.boundary, records, self.tolerance("a2_tol"), self.tolerance("zero_tol")
            )
        return analyzed

    @cached_property
    def oracle(self) -> DistanceOracle:
        return build_distance_oracle(self.metric, self.boundary, self.h, rays=self.rays)

    @cached_property
    def cut_times(self) -> CutLocus:
        return compute_cut_times(
            self.metric, self.boundary, self.oracle, self.rays, self.raw_focal, self.tolerance("minimality_slack")
        )

    @cached_property
    def cuts(self) -> CutLocus:
        """The cut times with one classified record per non-censored ray."""
        logging.info(f"classifying the cut locus of {self.scenario.name}")
        return classify_cut_locus(
            self.metric,
            self.boundary,
            self.oracle,
            self.cut_times,
            self.rays,
            self.focal_of,
            self.tolerance("minimality_slack"),
            self.tolerance("dedup_factor"),
        )

    def __str__(self):
        return f"{self.scenario} with {self.config.rays} rays per piece at h={self.h:g}"

    def to_dict(self):
        data = {"scenario": self.scenario.name, "dim": self.scenario.dim, "params": self.scenario.params}
        if "rays" in self.__dict__:
            data["ray_count"] = len(self.rays)
        if "cuts" in self.__dict__:
            data["counts"] = self.cuts.counts()
        return data
