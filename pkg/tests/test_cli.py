import json

import numpy as np
import pandas as pd
import pytest
import yaml

from bicomb.cli import emit_plotdata, main, verify
from bicomb.fitting import FitResult
from bicomb.histogram import DetectorSpec, expected_cross
from bicomb.sagnac import DensityMatrix


def read_summary(output_dir):
    return json.loads((output_dir / "summary.json").read_text())


def write_config(path, content):
    path.write_text(yaml.safe_dump(content))
    return path


@pytest.fixture
def content(example_config):
    return yaml.safe_load(example_config.read_text())


def test_table_s1_without_config(tmp_path, capsys):
    assert main(['table-s1', '--output-dir', str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path)
    assert verify(tmp_path) == []
    payload = read_summary(tmp_path)['payload']
    assert payload['pipeline'] == 'TableS1'
    assert payload['artifacts'] == ['table-s1.csv']
    assert payload['results']['1580']['finesse'] == pytest.approx(
        3.5e9 / 126e6
    )
    assert payload['results']['1600']['idler_finesse'] == 'nan'


def test_verify_detects_tampering(tmp_path, capsys):
    assert main(['table-s1', '--output-dir', str(tmp_path)]) == 0
    with open(tmp_path / "table-s1.csv", 'a') as file:
        file.write("1610,0,0,0,0,0,0,0\n")
    assert main(['verify', str(tmp_path)]) == 1
    assert 'table-s1.csv: checksum mismatch' in capsys.readouterr().err
    assert verify(tmp_path / "nowhere") != []


def test_verify_detects_foreign_artifact(tmp_path):
    assert main(['table-s1', '--output-dir', str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest['config_hash'] = '0' * 64
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    problems = verify(tmp_path)
    assert any('table-s1.csv: config hash' in p for p in problems)


def test_runs_are_reproducible(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    for output_dir in (first, second):
        assert main(['table-s1', '--seed', '4', '--output-dir',
                     str(output_dir)]) == 0
    assert read_summary(first)['payload_sha256'] == \
        read_summary(second)['payload_sha256']
    assert (first / "table-s1.csv").read_bytes() == \
        (second / "table-s1.csv").read_bytes()


def test_regime_report(example_config, tmp_path):
    assert main(['regime', str(example_config), '--output-dir',
                 str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "regime.csv", comment='#')
    assert list(table['regime']) == ['Hyperentangled', 'Multiplexed',
                                     'Neither']
    results = read_summary(tmp_path)['payload']['results']
    assert results['mode_count'] == 100
    assert results['boundaries']['Hyperentangled'] == pytest.approx(5e-4)
    assert verify(tmp_path) == []


def test_config_error(content, tmp_path, capsys):
    content['comb']['fsr_hz'] = 0
    path = write_config(tmp_path / "bad.yaml", content)
    assert main(['run', str(path), '--output-dir', str(tmp_path / "out")]) \
        == 1
    assert "error [config]: comb.fsr_hz: must be > 0" in \
        capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_subcommand_needs_its_sections(tmp_path, capsys):
    path = write_config(tmp_path / "table.yaml", {'pipeline': 'TableS1'})
    assert main(['regime', str(path), '--output-dir', str(tmp_path)]) == 1
    assert "comb: section required by RegimeReport" in capsys.readouterr().err


def test_tomography_pipeline(content, tmp_path):
    content['pipeline'] = 'Tomography'
    content['tomography']['bootstrap'] = 0
    path = write_config(tmp_path / "tomo.yaml", content)
    output_dir = tmp_path / "out"
    assert main(['tomo', str(path), '--output-dir', str(output_dir)]) == 0
    assert verify(output_dir) == []
    results = read_summary(output_dir)['payload']['results']
    weight = 0.81 * np.exp(-2 * 3.958e8 * 1e-9)
    assert results['fidelity_true'] == pytest.approx(1 / (1 + weight / 2))
    assert abs(results['fidelity'] - results['fidelity_true']) < 0.02
    assert 'fidelity_std' not in results

    plot = tmp_path / "plot.csv"
    assert main(['plotdata', str(output_dir / "rho-mle.txt"), '--kind',
                 'density-matrix', '--output', str(plot)]) == 0
    table = pd.read_csv(plot, comment='#')
    assert len(table) == 16
    assert table['re'][[0, 5, 10, 15]].sum() == pytest.approx(1)
    assert table['basis'][1] == 'HH-HV'
    manifest = json.loads((output_dir / "manifest.json").read_text())
    assert plot.read_text().startswith(
        f"# config_hash={manifest['config_hash']}\n"
    )


def test_plotdata_unknown_kind(tmp_path, capsys):
    artifact = tmp_path / "rho.txt"
    DensityMatrix.maximally_mixed().write(artifact)
    assert main(['plotdata', str(artifact), '--kind', 'spectrum',
                 '--output', str(tmp_path / "plot.csv")]) == 1
    assert "'kind' must be one of" in capsys.readouterr().err


def test_synthesize_then_fit(example_config, tmp_path):
    synth_dir, fit_dir = tmp_path / "synth", tmp_path / "fit"
    assert main(['synth-cross', str(example_config), '--output-dir',
                 str(synth_dir)]) == 0
    assert verify(synth_dir) == []
    histogram = synth_dir / "histogram-cross.csv"
    assert main(['fit', str(histogram), '--singly-resonant',
                 '--wavelength', '1580.48', '--output-dir',
                 str(fit_dir)]) == 0
    assert verify(fit_dir) == []
    result = FitResult.read(fit_dir / "fit-report.yaml")
    assert result.converged
    assert result.singly_resonant
    assert result.estimates['gamma_s'] == pytest.approx(np.pi * 126e6,
                                                        rel=0.1)
    cavity = pd.read_csv(fit_dir / "cavity-report.csv", comment='#')
    assert cavity['fsr_hz'][0] == pytest.approx(3.5e9, rel=0.01)

    overlay = tmp_path / "overlay.csv"
    assert main(['plotdata', str(fit_dir / "fit-report.yaml"), '--kind',
                 'fit-overlay', '--histogram', str(histogram), '--output',
                 str(overlay)]) == 0
    table = pd.read_csv(overlay, comment='#')
    assert list(table.columns) == ['tau_s', 'model_value']


def test_fit_with_config(example_config, content, tmp_path):
    synth_dir, fit_dir = tmp_path / "synth", tmp_path / "fit"
    assert main(['synth-cross', str(example_config), '--output-dir',
                 str(synth_dir)]) == 0
    content['seed'] = 11
    content['fit']['bounds'] = {'purity': [0.9, 0.92]}
    config = tmp_path / "fit.yaml"
    config.write_text(yaml.safe_dump(content))
    assert main(['fit', str(synth_dir / "histogram-cross.csv"), '--config',
                 str(config), '--output-dir', str(fit_dir)]) == 0
    assert verify(fit_dir) == []
    result = FitResult.read(fit_dir / "fit-report.yaml")
    assert result.model == 'cross_sum'
    assert result.singly_resonant
    assert 0.9 <= result.estimates['purity'] <= 0.92
    assert read_summary(fit_dir)['payload']['seed'] == 11
    assert (fit_dir / "cavity-report.csv").exists()


def test_mode_count_pipeline(content, tmp_path):
    content['pipeline'] = 'AutoModeCount'
    content['seed'] = 5
    content['comb']['mode_count'] = 1
    content['detector'].update(
        bin_width_s=40e-12, window_s=[-15e-9, 15e-9], total_counts=1e6
    )
    path = write_config(tmp_path / "auto.yaml", content)
    output_dir = tmp_path / "out"
    assert main(['mode-count', str(path), '--output-dir',
                 str(output_dir)]) == 0
    results = read_summary(output_dir)['payload']['results']
    assert abs(results['mode_estimate'] - 1) < 5 * results['mode_error']
    assert results['window_too_narrow'] is False
    assert verify(output_dir) == []


def test_emit_plotdata_histogram(singly_comb, tmp_path):
    detector = DetectorSpec(
        jitter_sigma=30e-12, bin_width=10e-12, window=(-8e-9, 2e-9),
        total_counts=1e4,
    )
    histogram = expected_cross(singly_comb, detector, 0.9)
    path = emit_plotdata(histogram, 'histogram', tmp_path / "h.csv", 'abc')
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=abc"
    table = pd.read_csv(path, comment='#')
    assert list(table.columns) == ['tau_s', 'counts', 'counts_err']
    assert np.allclose(table['counts_err'] ** 2, table['counts'])
    with pytest.raises(TypeError):
        emit_plotdata(histogram, 'density-matrix', tmp_path / "d.csv")
