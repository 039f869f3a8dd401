"""Tests for run directories: manifests, stored fields, reports, traces and CSV tables."""
from __future__ import annotations

import csv

import numpy as np
import pytest

from src import artifacts
from src.models import (
    ChiMode,
    ChiTable,
    IterationTrace,
    Provenance,
    RunConfig,
    RunReport,
    StageReport,
    StepRecord,
    VerificationCheck,
)
from src.utils import read_json


def _report():
    stage = StageReport(stage="geometry", checks=[VerificationCheck.positive("margin", 0.2)])
    return RunReport(command="build", stages=[stage], provenance=Provenance(config_hash="abc", seed=3))


def _trace():
    record = StepRecord(
        step=0, accepted=True, energy_before=0.0, energy_after=1.5,
        initial_energy_before=0.0, initial_energy_after=0.5,
        deficit_before=2.0, deficit_after=1.5, gain=1.5, amplitude=0.25,
    )
    return IterationTrace(seed=3, records=[record], beta_hat=0.7)


class TestSubsolutionDirectory:
    def test_round_trip(self, trivial_sub, tmp_path):
        artifacts.write_subsolution(trivial_sub, tmp_path / "run")
        back = artifacts.read_subsolution(tmp_path / "run")
        np.testing.assert_array_equal(back.rho0.values, trivial_sub.rho0.values)
        np.testing.assert_array_equal(back.times, trivial_sub.times)
        assert back.chi.kind == "constant"
        assert back.chi.t_bar == 1.0
        assert back.domain.outer_radius == trivial_sub.domain.outer_radius
        assert not back.perturbed

    def test_perturbation_samples_are_stored(self, trivial_sub, tmp_path):
        shape = (trivial_sub.times.size, 2) + trivial_sub.grid.dims
        dm = np.zeros(shape)
        dm[:, 1] = 0.01
        sub = trivial_sub.with_perturbation(dm, np.zeros(shape), np.zeros((shape[0], 3) + shape[2:]))
        artifacts.write_subsolution(sub, tmp_path)
        assert (tmp_path / "samples" / "dm_032.sfld").exists()
        back = artifacts.read_subsolution(tmp_path)
        assert back.perturbed
        np.testing.assert_array_equal(back.dm, sub.dm)

    def test_manifest_records_the_config(self, trivial_sub, tmp_path):
        config = RunConfig(seed=11)
        artifacts.write_subsolution(trivial_sub, tmp_path, config=config, extra={"source": "here"})
        manifest = artifacts.read_manifest(tmp_path)
        assert manifest["seed"] == 11
        assert manifest["source"] == "here"
        assert len(manifest["config_hash"]) == 16
        assert manifest["parts"] == []

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(artifacts.ArtifactError, match="has no manifest.json"):
            artifacts.read_subsolution(tmp_path)

    def test_foreign_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"format": "other", "version": 1}')
        with pytest.raises(artifacts.ArtifactError, match="is not a wildflow-subsolution"):
            artifacts.read_manifest(tmp_path)

    def test_missing_part(self, trivial_sub, tmp_path):
        artifacts.write_subsolution(trivial_sub, tmp_path)
        assert artifacts.read_part(tmp_path, "rho0").max_abs() == 1.0
        with pytest.raises(artifacts.ArtifactError, match="no stored field 'phi'"):
            artifacts.read_part(tmp_path, "phi")


class TestReports:
    def test_report_round_trip(self, tmp_path):
        report = _report()
        artifacts.write_report(report, tmp_path)
        stored = read_json(tmp_path / "report.json")
        assert stored["passed"] is True
        back = artifacts.read_report(tmp_path)
        assert back.passed
        assert back.stage("geometry").check("margin").value == 0.2
        assert back.provenance.seed == 3

    def test_missing_report(self, tmp_path):
        with pytest.raises(artifacts.ArtifactError, match="has no report.json"):
            artifacts.read_report(tmp_path)

    def test_trace_round_trip(self, tmp_path):
        assert artifacts.read_trace(tmp_path) is None
        artifacts.write_trace(_trace(), tmp_path)
        back = artifacts.read_trace(tmp_path)
        assert back.beta_hat == 0.7
        assert back.energies == [1.5]


class TestTables:
    def test_chi_rows_include_lambda(self):
        table = ChiTable(mode=ChiMode.CONSTANT, times=[0.0, 0.5], chi=[1.0, 1.0], lambda_values=[0.1, 0.2])
        header, rows = artifacts.chi_table_rows(table)
        assert header == ["t", "chi", "lambda"]
        assert rows == [[0.0, 1.0, 0.1], [0.5, 1.0, 0.2]]

    def test_chi_rows_without_lambda(self):
        header, rows = artifacts.chi_table_rows(ChiTable(mode=ChiMode.ODE, times=[0.0], chi=[2.0]))
        assert header == ["t", "chi"]
        assert rows == [[0.0, 2.0]]

    def test_trace_csv(self, tmp_path):
        header, rows = artifacts.trace_rows(_trace())
        path = artifacts.write_csv(tmp_path / "out" / "trace.csv", header, rows)
        with path.open(newline="") as fh:
            lines = list(csv.reader(fh))
        assert lines[0][:3] == ["step", "accepted", "cause"]
        assert lines[1][:2] == ["0", "True"]

    def test_chi_table_round_trip(self, tmp_path):
        assert artifacts.read_chi_table(tmp_path) is None
        table = ChiTable(mode=ChiMode.ODE, times=[0.0, 1.0], chi=[1.0, 0.5], t_bar=0.9, constants={"C1": 1.0})
        artifacts.write_chi_table(table, tmp_path)
        back = artifacts.read_chi_table(tmp_path)
        assert back.mode == ChiMode.ODE
        assert back.t_bar == 0.9
