"""Experiment orchestration behind the ``deatt`` command line.

Exit codes: 0 success, 1 a gradient check failed, 2 configuration or input
error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as config_mod
from . import numeric_core as nc
from .codebook import estimate_joint_collision_rate
from .config import ConfigError, ExperimentConfig
from .datagen import DataFormatError, Dataset, generate, load_csv
from .fusion import MODES as FUSION_MODES
from .fusion import TABLE_NAMES as FUSION_NAMES
from .model import (
    TABLE2_NAMES,
    VARIANTS,
    NumericAbort,
    build_variant,
    execution_mode,
    loss,
    save_checkpoint,
    train,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_GRADCHECK_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

GSC_NAMES = {True: "Combo-ID Attention", False: "Combo-ID Attention(w/o gsc)"}


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    paths = [cfg.resolve(cfg.data.dir) / name for name in (cfg.data.train, cfg.data.test)]
    for p in paths:
        if not p.is_file():
            raise ConfigError("data.dir", f"data file not found: {p}")
    return load_csv(paths[0]), load_csv(paths[1])


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def run_report(cfg: ExperimentConfig, kind: str, gsc: bool, result, name: str) -> dict:
    final = result.final if result.epochs else None
    report = {
        "model": name,
        "variant": kind,
        "gsc_enabled": gsc,
        "fusion_mode": cfg.fusion.mode if kind == "Dual" else None,
        "seed": cfg.seed,
        "verify": cfg.train.verify,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "steps": result.steps,
        "epochs": [vars(e) for e in result.epochs],
        "auc": final.auc if final else None,
        "gauc": final.gauc if final else None,
        "logloss": final.test_logloss if final else None,
    }
    # wall-clock would break byte-identical reruns; verify mode keeps it in a side file
    if not cfg.train.verify:
        report["wall_clock"] = result.wall_clock
    return report


def train_one(cfg: ExperimentConfig, kind: str, train_data: Dataset, test_data: Dataset,
              out_dir: Path, gsc: bool | None = None, name: str | None = None) -> dict:
    gsc = cfg.codebook.gsc_enabled if gsc is None else gsc
    params, _ = build_variant(kind, cfg, train_data.n_fields, gsc_enabled=gsc)
    result = train(params, train_data, test_data)
    report = run_report(cfg, kind, gsc, result, name or TABLE2_NAMES[kind])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(_dumps(report), encoding="utf-8")
    if cfg.train.verify:
        (out_dir / "timing.json").write_text(_dumps({"wall_clock": result.wall_clock}))
    save_checkpoint(out_dir / "checkpoint.npz", params)
    return report


def cmd_train(cfg: ExperimentConfig) -> dict:
    train_data, test_data = load_data(cfg)
    return train_one(cfg, cfg.model.variant, train_data, test_data, cfg.resolve(cfg.output.dir))


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower()


def ablation_plan(cfg: ExperimentConfig) -> dict[str, list[tuple[str, str, bool, str]]]:
    """Rows of each table as ``(row name, variant, gsc, fusion mode)``."""
    gsc = cfg.codebook.gsc_enabled
    table2 = [(TABLE2_NAMES[k], k, gsc, cfg.fusion.mode) for k in VARIANTS]
    table3 = [(GSC_NAMES[False], "ComboOnly", False, cfg.fusion.mode),
              (GSC_NAMES[True], "ComboOnly", True, cfg.fusion.mode)]
    table4 = [(FUSION_NAMES[m], "Dual", gsc, m) for m in FUSION_MODES]
    return {"table2": table2, "table3": table3, "table4": table4}


def cmd_ablate(cfg: ExperimentConfig) -> dict[str, list[dict]]:
    """Train every ablation row once (shared runs are reused) and write CSV tables."""
    train_data, test_data = load_data(cfg)
    out = cfg.resolve(cfg.output.dir) / "ablate"
    done: dict[tuple[str, bool, str], dict] = {}
    tables: dict[str, list[dict]] = {}
    for table, rows in ablation_plan(cfg).items():
        tables[table] = []
        for name, kind, gsc, mode in rows:
            # fusion mode only matters for Dual
            key = (kind, gsc, mode if kind == "Dual" else "")
            if key not in done:
                run_cfg = copy.deepcopy(cfg)
                run_cfg.fusion.mode = mode
                slug = _slug(f"{kind}_{'gsc' if gsc else 'nogsc'}_{key[2]}")
                log.info("ablation run %s", slug)
                done[key] = train_one(run_cfg, kind, train_data, test_data, out / slug, gsc, name)
            rep = done[key]
            tables[table].append(
                {"model": name, "auc": rep["auc"], "gauc": rep["gauc"], "logloss": rep["logloss"]}
            )
        with open(out / f"{table}.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["model", "auc", "gauc", "logloss"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(tables[table])
    return tables


def cmd_gen(cfg: ExperimentConfig) -> Path:
    out = cfg.resolve(cfg.data.dir)
    generate(cfg.data.gen, out)
    return out


def cmd_collision_probe(k: int, s: int, trials: int, seed: int) -> dict:
    rate = estimate_joint_collision_rate(k, s, trials, seed)
    return {"k": k, "s": s, "trials": trials, "seed": seed, "rate": rate,
            "expected_uniform": (1.0 / s) ** k}


def gradcheck_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Shrink a config to the toy gradient-check scale (float64, small tables)."""
    gc = cfg.gradcheck
    toy = copy.deepcopy(cfg)
    toy.data.bucket_count = gc.bucket_count
    toy.codebook.size = gc.codebook_size
    toy.model.dnn_widths = list(gc.dnn_widths)
    # unit-scale init so gradients are not vanishingly small for the max(1, .) metric
    toy.model.embed_std = 0.5
    toy.codebook.init_std = 0.5
    toy.train.verify = True
    return toy


def gradcheck_variants() -> list[tuple[str, bool, str]]:
    """Every variant the acceptance gate covers: (kind, gsc, fusion mode)."""
    rows = [("Transformer", True, "Multiply"), ("TransformerNoDiag", True, "Multiply"),
            ("ComboOnly", True, "Multiply"), ("ComboOnly", False, "Multiply"),
            ("CollapseOnly", True, "Multiply")]
    rows += [("Dual", True, m) for m in FUSION_MODES]
    return rows


def run_gradcheck(cfg: ExperimentConfig, kind: str | None = None, gsc: bool | None = None,
                  fusion_mode: str | None = None,
                  grad_hook: Callable[[str, np.ndarray], np.ndarray] | None = None
                  ) -> nc.GradCheckReport:
    toy = gradcheck_config(cfg)
    if fusion_mode is not None:
        toy.fusion.mode = fusion_mode
    kind = kind or toy.model.variant
    gc = toy.gradcheck
    params, _ = build_variant(kind, toy, gc.n_fields, gsc_enabled=gsc, dtype=np.float64)
    rng = np.random.default_rng(gc.seed)
    ids = rng.integers(0, 50, size=(gc.batch_size, gc.n_fields)).astype(np.uint64)
    labels = rng.integers(0, 2, size=gc.batch_size)
    with execution_mode(True):
        return nc.grad_check(
            lambda: loss(params, ids, labels, training=True, update_state=False),
            params.parameters(), h=gc.h, tol=gc.tol, grad_hook=grad_hook,
        )


# --------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deatt", description="Dual enhanced attention experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train one variant and write a report + checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--verify", action="store_true", help="float64, single-threaded, checked")
    a = sub.add_parser("ablate", help="train all ablation rows and write CSV tables")
    a.add_argument("--config", required=True)
    a.add_argument("--verify", action="store_true")
    g = sub.add_parser("gen", help="generate synthetic train/test data")
    g.add_argument("--config", required=True)
    c = sub.add_parser("collision-probe", help="Monte Carlo joint collision rate")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--s", type=int, required=True)
    c.add_argument("--trials", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    gc = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    gc.add_argument("--config", required=True)
    gc.add_argument("--all-variants", action="store_true")
    sub.add_parser("config-reference", help="print every config key with its default")
    return p


def _print_gradcheck(label: str, rep: nc.GradCheckReport) -> None:
    for b in rep.blocks:
        status = "PASS" if b.passed else "FAIL"
        print(f"{status} {label} {b.name} max_rel_error={b.max_rel_error:.3e}")


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "config-reference":
            print(config_mod.reference())
            return EXIT_OK
        if args.command == "collision-probe":
            if args.s < 1 or args.k < 1 or args.trials < 1:
                raise ConfigError("", "k, s and trials must all be >= 1")
            res = cmd_collision_probe(args.k, args.s, args.trials, args.seed)
            print(f"joint collision rate (k={args.k}, s={args.s}): {res['rate']:.6g}")
            print(json.dumps(res, sort_keys=True))
            return EXIT_OK
        cfg = config_mod.load(args.config)
        if getattr(args, "verify", False):
            cfg.train.verify = True
        if args.command == "train":
            rep = cmd_train(cfg)
            print(json.dumps({k: rep[k] for k in ("model", "auc", "gauc", "logloss")}))
        elif args.command == "ablate":
            tables = cmd_ablate(cfg)
            for table, rows in tables.items():
                for r in rows:
                    print(f"{table}\t{r['model']}\tAUC={r['auc']:.4f}\tGAUC={r['gauc']:.4f}")
        elif args.command == "gen":
            print(f"wrote {cmd_gen(cfg)}")
        elif args.command == "gradcheck":
            if args.all_variants:
                runs = gradcheck_variants()
            else:
                runs = [(cfg.model.variant, cfg.codebook.gsc_enabled, cfg.fusion.mode)]
            ok = True
            out = []
            for kind, gsc, mode in runs:
                rep = run_gradcheck(cfg, kind, gsc, mode)
                label = kind + ("" if gsc else "(w/o gsc)") + (f"[{mode}]" if kind == "Dual" else "")
                _print_gradcheck(label, rep)
                out.append({"variant": label, **rep.to_dict()})
                ok &= rep.passed
            print(json.dumps({"passed": ok, "runs": out}, sort_keys=True))
            return EXIT_OK if ok else EXIT_GRADCHECK_FAIL
        return EXIT_OK
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"deatt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericAbort, nc.NumericError) as exc:
        print(f"deatt: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
