import dataclasses

import pytest

from pedattr import pipeline as P
from pedattr.ingest import AttributeRegistry, write_manifest
from pedattr.synth import generate_synthetic


def test_config_file_parsing(tmp_path):
    (tmp_path / "m.tsv").write_text("")
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        "# demo\n"
        "manifest = m.tsv\n"
        "schemes = fore-whole, whole\n"
        "regimes = iksvm, MRFr2   # trailing comment\n"
        "lambda = 0.5\n"
        "k = 7\n"
        "sigma = auto\n"
        "tune-C = yes\n"
        "ratios = 0.6, 0.1, 0.3\n")
    cfg = P.load_config(cfg_path, k=3)
    assert cfg.manifest == str(tmp_path / "m.tsv")
    assert cfg.schemes == ("fore+whole", "whole")
    assert cfg.regimes == ("iksvm", "mrfr2")
    assert (cfg.lam, cfg.k, cfg.sigma, cfg.tune_C) == (0.5, 3, None, True)
    assert cfg.ratios == (0.6, 0.1, 0.3)


@pytest.mark.parametrize("text, needle", [("colour = red", "unknown key"),
                                          ("k 5", "key = value"),
                                          ("augment = perhaps", "boolean")])
def test_config_file_errors(tmp_path, text, needle):
    with pytest.raises(ValueError, match=needle):
        P.parse_config_text(text)


def test_config_validation(tmp_path):
    with pytest.raises(FileNotFoundError):
        P.RunConfig(manifest=str(tmp_path / "nope.tsv"))
    for bad in ({"k": 0}, {"lam": -1}, {"sigma": 0.0}, {"regimes": ("mrf9",)},
                {"schemes": ("back",)}):
        with pytest.raises(ValueError):
            P.RunConfig(**bad)


def test_config_hash_ignores_output_paths(tmp_path):
    a = P.RunConfig(out_dir=str(tmp_path / "a"), cache_dir="/x")
    b = P.RunConfig(out_dir=str(tmp_path / "b"))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != P.RunConfig(k=4).config_hash()


SMALL = dict(synth_n=120, synth_attrs=3, seed=1, trees=10)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = P.RunConfig(regimes=("iksvm", "mrfg1", "mrfr2"), schemes=("fore+whole", "whole"),
                      out_dir=str(out / "a"), **SMALL)
    return cfg, P.run_pipeline(cfg), out


def test_report_shape(small_run):
    cfg, rep, out = small_run
    assert rep.attributes == ["UpperRed", "LowerDark", "Backpack"]
    assert len(rep.columns) == 6
    for v in list(rep.accuracy.values()) + list(rep.balanced.values()):
        assert 0.0 <= v <= 100.0
    assert rep.metadata["config"] == cfg.config_hash()
    assert rep.metadata["seed"] == "1"
    assert "sigma[mrfg1,whole]" in rep.metadata
    names = sorted(p.name for p in (out / "a").iterdir())
    assert names == ["accuracy.csv", "balanced_accuracy.csv", "balanced_report.txt", "report.txt"]


def test_iksvm_only_is_unary_table(tmp_path):
    rep = P.run_pipeline(P.RunConfig(regimes=("iksvm",), schemes=("whole", "fore"), **SMALL))
    assert rep.columns == [("iksvm", "whole"), ("iksvm", "fore")]


def test_rerun_and_cache_byte_identical(small_run, tmp_path):
    cfg, _, out = small_run
    again = dataclasses.replace(cfg, out_dir=str(out / "b"), cache_dir=str(tmp_path / "cache"))
    P.run_pipeline(again)
    cached = dataclasses.replace(again, out_dir=str(out / "c"))
    P.run_pipeline(cached)
    assert any((tmp_path / "cache").iterdir())
    for name in ("report.txt", "accuracy.csv", "balanced_accuracy.csv"):
        ref = (out / "a" / name).read_bytes()
        assert (out / "b" / name).read_bytes() == ref
        assert (out / "c" / name).read_bytes() == ref


def test_stage_name_attached():
    with pytest.raises(P.PipelineError) as err:
        P.run_pipeline(P.RunConfig(attributes=("Nope",), **SMALL))
    assert err.value.stage == "load" and "Nope" in str(err.value)


def test_training_failure_tagged(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("solver exploded")
    monkeypatch.setattr(P, "train_iksvm", boom)
    with pytest.raises(P.PipelineError, match=r"\[train-unary\[whole\]\] solver exploded"):
        P.run_pipeline(P.RunConfig(regimes=("iksvm",), schemes=("whole",), **SMALL))


def test_single_class_attribute_skipped(tmp_path):
    reg, samples = generate_synthetic(60, attrs=2, seed=3)
    samples = [dataclasses.replace(s, labels={**s.labels, "Rare": 0}) for s in samples]
    reg = AttributeRegistry.from_samples(reg.names + ("Rare",), samples)
    write_manifest(tmp_path / "m.tsv", reg, samples)
    rep = P.run_pipeline(P.RunConfig(manifest=str(tmp_path / "m.tsv"), regimes=("iksvm", "mrfr1"),
                                     schemes=("whole",), trees=5))
    assert "Rare" in rep.skipped and "Rare" not in rep.attributes
    assert "# skipped Rare" in rep.to_text()


def test_manifest_without_splits_is_partitioned(tmp_path):
    reg, samples = generate_synthetic(40, attrs=1, seed=5)
    samples = [dataclasses.replace(s, split=None) for s in samples]
    write_manifest(tmp_path / "m.tsv", reg, samples)
    cfg = P.RunConfig(manifest=str(tmp_path / "m.tsv"), seed=2)
    _, loaded, dataset_id = P.load_dataset(cfg)
    assert all(s.split is not None for s in loaded)
    assert dataset_id.startswith("manifest:")


def test_noise_free_color_attribute_accuracy():
    rep = P.run_pipeline(P.RunConfig(synth_n=300, synth_attrs=2, regimes=("iksvm",),
                                     attributes=("UpperRed",), seed=0))
    assert rep.accuracy[("UpperRed", ("iksvm", "fore+whole"))] >= 95.0
