import numpy as np
import pytest

from bhm import testbed as tb
from bhm.accum import Domain, SampleAccumulator, read_hist, write_hist
from bhm.cli import main
from bhm.splinefit import read_spline


def run(*args):
    return main([str(a) for a in args])


def table(path):
    return np.loadtxt(path, comments="#", usecols=(0, 1, 2))


@pytest.fixture
def cubic_files(tmp_path):
    hist = tmp_path / "cubic.hist"
    assert run("sample", "--dist", "cubic", "--n", 10000, "--seed", 1, "--k", 10, "--parts", 4, "--out", hist) == 0
    spl = tmp_path / "cubic.spline"
    assert run("fit", hist, "--out", spl) == 0
    return hist, spl


def test_sample_fit_one_piece(cubic_files, tmp_path, capsys):
    hist, spl = cubic_files
    model, meta = read_spline(spl)
    assert model.n_pieces == 1
    assert meta["accepted"]
    capsys.readouterr()
    run("fit", hist, "--out", tmp_path / "again.spline")
    err = capsys.readouterr().err
    assert "pieces 1 accepted True" in err
    assert err.count("level ") == 11


def test_parts_merge_to_total(cubic_files, tmp_path):
    hist, _ = cubic_files
    parts = sorted(tmp_path.glob("cubic.part*.hist"))
    assert len(parts) == 4
    out = tmp_path / "merged.hist"
    assert run("merge", *parts, "--out", out) == 0
    assert out.read_text() == hist.read_text()
    assert read_hist(out).total == 10000


def test_merge_errors(cubic_files, tmp_path):
    hist, _ = cubic_files
    other = tmp_path / "other.hist"
    write_hist(SampleAccumulator(Domain(0.0, 1.0), 10), other)
    assert run("merge", hist, other, "--out", tmp_path / "x.hist") == 1
    with pytest.raises(SystemExit) as exc:
        run("merge", hist, "--out", tmp_path / "x.hist")
    assert exc.value.code == 64
    # an empty histogram on the same grid pools to the other input
    empty = tmp_path / "empty.hist"
    write_hist(read_hist(hist).empty_like(), empty)
    assert run("merge", hist, empty, "--out", tmp_path / "same.hist") == 0
    assert (tmp_path / "same.hist").read_text() == hist.read_text()


def test_usage_errors_exit_64(tmp_path):
    for argv in (["fit"], ["sample", "--dist", "cubic", "--n", "10", "--out", "x", "--bogus"], ["frobnicate"],
                 ["sample", "--dist", "normal", "--n", "10", "--out", "x"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 64


def test_bad_files_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.hist"
    bad.write_text("not a histogram\n")
    assert run("fit", bad, "--out", tmp_path / "s") == 1
    assert run("eval", tmp_path / "missing.spline") == 1
    assert "bhm" in capsys.readouterr().err


def test_eval_and_continuity(cubic_files, tmp_path):
    _, spl = cubic_files
    out = tmp_path / "eval.tsv"
    assert run("eval", spl, "--out", out, "--grid", 33) == 0
    x, value, sigma = table(out).T
    model, _ = read_spline(spl)
    assert np.allclose(value, model(x), rtol=1e-15)
    assert np.all(sigma > 0)
    assert out.read_text().startswith("# x\tvalue\tsigma\tmethod")


def test_continuity_at_knots(tmp_path):
    hist = tmp_path / "cos.hist"
    run("sample", "--dist", "cosine", "--n", 10**5, "--seed", 2, "--out", hist)
    spl = tmp_path / "cos.spline"
    assert run("fit", hist, "--out", spl) in (0, 3)
    model, _ = read_spline(spl)
    assert model.n_pieces > 1
    t = model.breakpoints[1:-1]
    scale = np.abs(model(model.breakpoints)).max()
    for j, knot in enumerate(t):
        for k in range(model.order):
            left = model.derivative(np.array([knot]), k, piece=j)
            right = model.derivative(np.array([knot]), k, piece=j + 1)
            h = model.halfwidths[j:j + 2].min()
            assert abs(left - right) * h**k < 1e-9 * scale


def test_check_zero_exit_codes(tmp_path, capsys):
    sign = tmp_path / "sign.hist"
    run("sample", "--dist", "signtoy", "--n", 10**5, "--seed", 3, "--out", sign)
    assert run("check-zero", sign) == 2
    out = capsys.readouterr().out
    assert out.startswith("verdict ConsistentWithZero")
    assert "# level" in out
    assert run("fit", sign, "--out", tmp_path / "s") == 2
    assert run("fit", sign, "--out", tmp_path / "s", "--allow-zero") in (0, 3)
    cubic = tmp_path / "c.hist"
    run("sample", "--dist", "cubic", "--n", 1000, "--seed", 3, "--out", cubic)
    assert run("check-zero", cubic) == 0


def test_unaccepted_fit_exit_3(tmp_path):
    hist = tmp_path / "div.hist"
    run("sample", "--dist", "divergent", "--weight-power", 0.2, "--n", 10**5, "--seed", 0, "--out", hist)
    spl = tmp_path / "div.spline"
    assert run("fit", hist, "--out", spl) == 3
    _, meta = read_spline(spl)
    assert not meta["accepted"]


def test_compare_and_error_methods(cubic_files, tmp_path):
    hist, spl = cubic_files
    cmp = tmp_path / "cmp.tsv"
    assert run("compare", spl, "--dist", "cubic", "--out", cmp) == 0
    x, diff, sigma = table(cmp).T
    assert np.mean(np.abs(diff) < 3 * sigma) > 0.9
    parts = sorted(tmp_path.glob("cubic.part*.hist"))
    out = tmp_path / "err.tsv"
    assert run("errors", spl, "--methods", "cov,bootstrap", "--parts", *parts, "--m-tilde", 20,
               "--grid", 16, "--out", out) == 0
    rows = out.read_text().splitlines()[1:]
    assert [r.split("\t")[-1] for r in rows] == ["covariance"] * 16 + ["bootstrap"] * 16
    assert run("errors", spl, "--methods", "cov,jackknife", "--out", out) == 1
    assert run("eval", spl, "--errors", "bootstrap", "--out", out) == 1


def test_evolution_band_from_snapshots(tmp_path):
    hist = tmp_path / "e.hist"
    run("sample", "--dist", "exp", "--n", 8000, "--seed", 4, "--parts", 4, "--out", hist)
    parts = sorted(tmp_path.glob("e.part*.hist"))
    snaps = []
    for k in range(1, 5):
        h = tmp_path / f"upto{k}.hist"
        if k == 1:
            h.write_text(parts[0].read_text())
        else:
            run("merge", tmp_path / f"upto{k - 1}.hist", parts[k - 1], "--out", h)
        s = tmp_path / f"upto{k}.spline"
        run("fit", h, "--out", s)
        snaps.append(s)
    out = tmp_path / "evo.tsv"
    assert run("eval", snaps[-1], "--errors", "evolution", "--snapshots", *snaps, "--delta", 2000,
               "--grid", 8, "--out", out) == 0
    assert np.all(table(out)[:, 2] >= 0)


def test_semi_infinite_eval(tmp_path):
    hist = tmp_path / "d.hist"
    run("sample", "--dist", "divergent", "--n", 20000, "--seed", 5, "--out", hist)
    spl = tmp_path / "d.spline"
    run("fit", hist, "--out", spl)
    assert run("compare", spl, "--dist", "divergent", "--out", tmp_path / "c.tsv") == 1
    out = tmp_path / "c.tsv"
    assert run("compare", spl, "--dist", "divergent", "--x-lo", 0.01, "--x-hi", 50, "--grid", 40,
               "--out", out) == 0
    x, diff, sigma = table(out).T
    assert x[0] == pytest.approx(0.01) and x[-1] == pytest.approx(50)
    assert np.mean(np.abs(diff) < 3 * sigma) > 0.9
