import csv
import json

import numpy as np
import pytest

from guidedseg import cli
from guidedseg.core import CameraModel, SoftPredictionMap
from guidedseg.dataset import (
    gps_nearest_correspondence,
    load_soft_map,
    parse_manifest,
    save_depth,
    save_image,
    save_labels,
    save_mask,
    save_soft_map,
)
from guidedseg.geometry import MatchSet, write_match_file
from guidedseg.synthetic import random_distribution_map, random_rotation
from tests.oracles import brute_force_tally, confusion_mean_iou, uiou_from_counts

H, W, C = 30, 40, 19
CAM = {"fx": 40.0, "fy": 40.0, "cx": 19.5, "cy": 14.5}


def write_manifest(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_match(tmp_path):
    dark = [{"id": f"n{i}", "role": "night", "gps": [47.37 + 1e-4 * i, 8.54]} for i in range(4)]
    day = [{"id": f"d{i}", "role": "day", "gps": [47.37 + 1.5e-4 * i, 8.5401]} for i in range(3)]
    write_manifest(tmp_path / "dark.jsonl", dark)
    write_manifest(tmp_path / "day.jsonl", day)
    assert run("match", "--dark", tmp_path / "dark.jsonl", "--day", tmp_path / "day.jsonl",
               "--out", tmp_path / "c.csv") == 0
    rows = read_csv(tmp_path / "c.csv")
    assert rows[0] == ["dark_id", "day_id", "distance_m"]
    expect = gps_nearest_correspondence(parse_manifest(tmp_path / "dark.jsonl"),
                                        parse_manifest(tmp_path / "day.jsonl"))
    assert [(r[0], r[1], float(r[2])) for r in rows[1:]] == [
        (e.dark_id, e.day_id, e.distance_m) for e in expect]


def test_match_empty_day_manifest(tmp_path, capsys):
    write_manifest(tmp_path / "dark.jsonl", [{"id": "n", "role": "night", "gps": [0, 0]}])
    (tmp_path / "day.jsonl").write_text("")
    code = run("match", "--dark", tmp_path / "dark.jsonl", "--day", tmp_path / "day.jsonl",
               "--out", tmp_path / "c.csv")
    assert code != 0
    assert "EmptyReferenceSet" in capsys.readouterr().err


def make_pair(tmp, rng, name, s_dark, s_day, img_dark, img_day, matches=None):
    for tag, s, img in (("n", s_dark, img_dark), ("d", s_day, img_day)):
        save_soft_map(tmp / f"{tag}{name}.spm", s.values.astype(np.float32))
        save_image(tmp / f"{tag}{name}.png", img)
    save_depth(tmp / f"d{name}.dpt", np.full((H, W), 10.0, dtype=np.float32))
    dark = {"id": f"n{name}", "role": "night", "gps": [0, 0], "image": f"n{name}.png",
            "soft_map": f"n{name}.spm", "camera": CAM}
    day = {"id": f"d{name}", "role": "day", "gps": [0, 0], "image": f"d{name}.png",
           "soft_map": f"d{name}.spm", "depth": f"d{name}.dpt", "camera": CAM}
    if matches is not None:
        write_match_file(tmp / f"n{name}.txt", matches)
        dark["matches"] = f"n{name}.txt"
    return dark, day


def few_inlier_matches(rng):
    cam = CameraModel(**CAM)
    z = rng.uniform(4, 20, 10)
    X = np.column_stack([rng.uniform(-0.3, 0.3, (10, 2)) * z[:, None], z])
    Y = X @ random_rotation(rng, 2).T + [0.5, 0.0, 0.1]

    def proj(P):
        q = P @ cam.K.T
        return q[:, :2] / q[:, 2:]
    return MatchSet(proj(X), proj(Y))


def refine_corpus(tmp, rng):
    rows, dark, day = [], [], []
    # a: constant prediction, identical images
    const = SoftPredictionMap(np.broadcast_to(rng.dirichlet(np.ones(C)), (H, W, C)).copy())
    img = rng.integers(0, 256, (H, W, 3)).astype(np.uint8)
    pairs = [("a", const, const, img, img, None),
             ("b", random_distribution_map(rng, H, W, C), random_distribution_map(rng, H, W, C),
              img, img[:, ::-1].copy(), few_inlier_matches(rng))]
    for name, *rest in pairs:
        dk, dy = make_pair(tmp, rng, name, *rest)
        dark.append(dk)
        day.append(dy)
        rows.append(f"n{name},d{name},0.0")
    write_manifest(tmp / "dark.jsonl", dark)
    write_manifest(tmp / "day.jsonl", day)
    (tmp / "c.csv").write_text("dark_id,day_id,distance_m\n" + "\n".join(rows) + "\n")
    return const


def refine_args(tmp, out, *extra):
    return ("refine", "--correspondences", tmp / "c.csv", "--dark", tmp / "dark.jsonl",
            "--day", tmp / "day.jsonl", "--out", out, "--sigma-s", 3, *extra)


def test_refine(tmp_path, rng):
    const = refine_corpus(tmp_path, rng)
    assert run(*refine_args(tmp_path, tmp_path / "out")) == 0
    report = {r[0]: r for r in read_csv(tmp_path / "out/report.csv")[1:]}
    assert read_csv(tmp_path / "out/report.csv")[0] == [
        "dark_id", "day_id", "status", "mode", "inlier_count", "note"]
    # identical prediction everywhere: whatever alignment runs, the result is the input
    fused = load_soft_map(tmp_path / "out/na_refined.spm")
    assert np.abs(fused.values - const.values).max() <= 1e-6
    # ten matches cannot reach 14 inliers
    assert report["nb"][2] == "ok" and report["nb"][3] == "bilateral"
    assert int(report["nb"][4]) <= 10
    assert (tmp_path / "out/nb_labels.png").exists()


def test_refine_is_deterministic(tmp_path, rng):
    refine_corpus(tmp_path, rng)
    for out in ("o1", "o2"):
        assert run(*refine_args(tmp_path, tmp_path / out, "--seed", 3, "--workers", 2)) == 0
    for name in ("na_refined.spm", "nb_refined.spm", "na_labels.png", "nb_labels.png", "report.csv"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_refine_partial_failure(tmp_path, rng):
    refine_corpus(tmp_path, rng)
    with open(tmp_path / "c.csv", "a") as f:
        f.write("ghost,da,0.0\n")
    assert run(*refine_args(tmp_path, tmp_path / "out")) == 1
    rows = read_csv(tmp_path / "out/report.csv")[1:]
    assert [r[0] for r in rows] == ["na", "nb", "ghost"]
    assert [r[2] for r in rows] == ["ok", "ok", "failed"]
    assert (tmp_path / "out/nb_refined.spm").exists()


def eval_corpus(tmp, rng, n=3, h=8, w=8, perfect=False):
    preds, gts = [], []
    soft, labels, masks = [], [], []
    for i in range(n):
        s = random_distribution_map(rng, h, w, C, temperature=0.3)
        g = rng.integers(0, 5, (h, w))
        g[rng.random((h, w)) < 0.1] = 255
        j = rng.random((h, w)) < 0.3
        if perfect:
            v = np.full((h, w, C), 0.0)
            np.put_along_axis(v, np.where(g == 255, 0, g)[..., None], 1.0, axis=2)
            s = SoftPredictionMap(v)
            j[:] = False
        save_soft_map(tmp / f"p{i}.spm", s.values.astype(np.float32))
        save_labels(tmp / f"g{i}.png", g)
        save_mask(tmp / f"j{i}.png", j)
        preds.append({"id": f"x{i}", "role": "night", "gps": [0, 0], "soft_map": f"p{i}.spm"})
        gts.append({"id": f"x{i}", "role": "night", "gps": [0, 0], "label": f"g{i}.png",
                    "invalid": f"j{i}.png"})
        soft.append(load_soft_map(tmp / f"p{i}.spm").values)
        labels.append(g)
        masks.append(j)
    write_manifest(tmp / "pred.jsonl", preds)
    write_manifest(tmp / "gt.jsonl", gts)
    return soft, labels, masks


def score_table(path):
    rows = read_csv(path)
    assert rows[0] == ["class", "uiou", "tp", "fp", "fn", "ti", "fi"]
    return {r[0]: r for r in rows[1:]}


def test_evaluate_default_theta_is_mean_iou(tmp_path, rng, capsys):
    soft, labels, _ = eval_corpus(tmp_path, rng)
    assert run("evaluate", "--pred", tmp_path / "pred.jsonl", "--gt", tmp_path / "gt.jsonl",
               "--out", tmp_path / "t.csv") == 0
    table = score_table(tmp_path / "t.csv")
    _, miou = confusion_mean_iou([s.argmax(axis=2) for s in soft], labels, C)
    assert float(table["mean"][1]) == pytest.approx(miou, abs=1e-9)
    assert float(table["theta"][1]) == pytest.approx(1 / C)
    assert "mean UIoU" in capsys.readouterr().out


def test_evaluate_matches_brute_force(tmp_path, rng):
    soft, labels, masks = eval_corpus(tmp_path, rng)
    theta = 0.12
    assert run("evaluate", "--pred", tmp_path / "pred.jsonl", "--gt", tmp_path / "gt.jsonl",
               "--theta", theta, "--out", tmp_path / "t.csv", "--workers", 3) == 0
    table = score_table(tmp_path / "t.csv")
    counts = np.zeros((5, C), dtype=np.int64)
    for s, g, j in zip(soft, labels, masks):
        pred = np.where(s.max(axis=2) >= theta, s.argmax(axis=2), 19)
        counts += brute_force_tally(pred, g, j, C, 19)
    per = uiou_from_counts(counts)
    got = table["road"]
    assert [int(v) for v in got[2:]] == counts[:, 0].tolist()
    assert float(table["mean"][1]) == pytest.approx(np.nanmean(per), abs=1e-9)


def test_evaluate_perfect(tmp_path, rng):
    eval_corpus(tmp_path, rng, perfect=True)
    assert run("evaluate", "--pred", tmp_path / "pred.jsonl", "--gt", tmp_path / "gt.jsonl",
               "--theta", 0.9, "--out", tmp_path / "t.csv") == 0
    assert float(score_table(tmp_path / "t.csv")["mean"][1]) == 1.0


def test_evaluate_bad_theta(tmp_path, rng, capsys):
    eval_corpus(tmp_path, rng)
    assert run("evaluate", "--pred", tmp_path / "pred.jsonl", "--gt", tmp_path / "gt.jsonl",
               "--theta", 0.01, "--out", tmp_path / "t.csv") == 1
    assert "ThetaOutOfRange" in capsys.readouterr().err


def test_curve(tmp_path, rng, capsys):
    soft, labels, _ = eval_corpus(tmp_path, rng)
    assert run("curve", "--pred", tmp_path / "pred.jsonl", "--gt", tmp_path / "gt.jsonl",
               "--grid-size", 11, "--out", tmp_path / "curve.csv") == 0
    rows = read_csv(tmp_path / "curve.csv")
    assert rows[0][:3] == ["theta", "mean_uiou", "road"] and len(rows[0]) == 2 + C
    assert len(rows) == 12
    thetas = [float(r[0]) for r in rows[1:]]
    assert thetas[0] == pytest.approx(1 / C) and thetas[-1] == 1.0
    _, miou = confusion_mean_iou([s.argmax(axis=2) for s in soft], labels, C)
    assert float(rows[1][1]) == pytest.approx(miou, abs=1e-8)
    # class 18 is predicted somewhere but never in the ground truth
    assert rows[1][2 + 18] == "0"
    means = [float(r[1]) for r in rows[1:]]
    assert f"max mean UIoU {max(means):.9g}" in capsys.readouterr().out


def test_missing_ground_truth_record(tmp_path, rng):
    eval_corpus(tmp_path, rng)
    write_manifest(tmp_path / "gt.jsonl", [])
    assert run("evaluate", "--pred", tmp_path / "pred.jsonl", "--gt", tmp_path / "gt.jsonl",
               "--out", tmp_path / "t.csv") == 1


def test_workers_default_from_environment(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.default_workers() == 3
    monkeypatch.delenv(cli.WORKERS_ENV)
    assert cli.default_workers() >= 1


def test_run_items_keeps_order():
    res = cli.run_items(lambda x: x * x, list(range(20)), workers=4)
    assert [r.value for r in res] == [x * x for x in range(20)]


def test_console_entry_point(tmp_path):
    import subprocess
    import sys
    p = subprocess.run([sys.executable, "-m", "guidedseg.cli", "--help"], capture_output=True,
                       text=True)
    assert p.returncode == 0 and "refine" in p.stdout
