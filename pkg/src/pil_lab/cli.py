"""Experiment orchestration: config parsing, seed sweeps, and CSV emission.

Every command reads a JSON config validated against a per-command schema
(unknown keys are rejected by name), and writes results CSVs whose first
line embeds the config hash and seed list so reruns are checkable
byte-for-byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys as _sys
from pathlib import Path

import numpy as np

from . import eval_metrics, linear_learners as ll, lti_world, nonlinear_world as nw
from .autodiff import save_checkpoint
from .lti_world import FeedbackGain, LtiSystem, example_system
from .numkit import NoiseModel, RngStream
from .pil_nn import (
    PilLossConfig,
    build_pil_model,
    build_policy_model,
    deploy_policy,
    train,
)


class ConfigError(ValueError):
    pass


EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

SCHEMAS = {
    "lin-noise-sweep": {
        "seeds": list(range(20)),
        "n_traj": 50,
        "T": 100,
        "h_list": [1, 2, 3, 4, 5],
        "n_test": 1000,
        "alpha": 0.9,
        "ridge": 0.0,
        "high_state": {"sigma_xi": 0.5, "sigma_eta": 0.01},
        "high_input": {"sigma_xi": 0.01, "sigma_eta": 0.5},
    },
    "lin-pred-order": {
        "seeds": list(range(10)),
        "n_traj": 5,
        "T": 50,
        "eval_T": 200,
        "h_list": [2, 4, 8],
        "n_test": 500,
        "noise_bound": 0.5,
        "alpha": 0.9,
        "q_weight": 0.1,
        "r_weight": 1.0,
        "p_weight": 10.0,
        "epochs": 500,
        "batch_size": 64,
        "lr_start": 5e-4,
        "lr_end": 1e-8,
        "latent_dim": 16,
        "encoder_hidden": [64],
        "predictor_hidden": [64],
        "policy_hidden": [32, 32],
        "methods": ["bc", "rollout", "pil"],
    },
    "pendulum": {
        "seeds": list(range(5)),
        "n_traj": 50,
        "T": 100,
        "h": 4,
        "n_test": 200,
        "alpha": 1.0,
        "q_weight": 1.0,
        "r_weight": 1.0,
        "p_weight": 10.0,
        "epochs": 1000,
        "batch_size": 64,
        "lr_start": 2e-4,
        "lr_end": 1e-8,
        "latent_dim": 32,
        "encoder_hidden": [64],
        "predictor_hidden": [64, 64],
        "policy_hidden": [32, 32],
        "angle_noise_deg": 3.0,
        "rate_noise_deg": 10.0,
        "input_noise": 0.1,
        "variants": [
            "bc",
            "rollout",
            "rollout_nograd",
            "pil",
            "pil_nograd",
        ],
        "noise_cases": ["none", "with"],
    },
    "theory-scan": {
        "t_grid": [32, 64, 128, 256, 512, 1024, 2048, 4096],
        "sigma_xi_levels": [0.0, 0.05, 0.1],
        "sigma_eta": 0.1,
        "n_seeds": 30,
        "h": 2,
        "alpha": 0.9,
        "noise_mc_draws": 1000,
        "noise_mc_n_traj": 5,
        "noise_mc_T": 50,
        "noise_mc_sigma_pairs": [[0.005, 0.1], [0.5, 0.05]],
        "seed": 0,
    },
    "gen-data": {
        "world": "linear",
        "seed": 0,
        "n_traj": 50,
        "T": 100,
        "sigma_xi": 0.1,
        "sigma_eta": 0.1,
        "dataset": "dataset.csv",
    },
    "train": {
        "dataset": "dataset.csv",
        "method": "bc",
        "h": 2,
        "alpha": 0.9,
        "q_weight": 1.0,
        "r_weight": 1.0,
        "p_weight": 1.0,
        "epochs": 50,
        "batch_size": 64,
        "lr_start": 5e-4,
        "lr_end": 1e-8,
        "latent_dim": 16,
        "encoder_hidden": [64],
        "predictor_hidden": [64],
        "policy_hidden": [32, 32],
        "seed": 0,
        "checkpoint": "model.npz",
        "train_log": "train_log.csv",
    },
    "eval": {
        "dataset": "dataset.csv",
        "checkpoint": "model.npz",
        "n_test": 100,
        "T": 100,
        "seed": 0,
        "results": "eval.csv",
    },
}


def _validate(cfg: dict, schema: dict, path: str = "") -> dict:
    out = {}
    for key, val in cfg.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        default = schema[key]
        if isinstance(default, dict) and isinstance(val, dict):
            out[key] = _validate(val, default, path + key + ".")
        else:
            out[key] = val
    for key, default in schema.items():
        if key not in out:
            out[key] = json.loads(json.dumps(default))  # deep copy
    return out


def load_config(path, command: str) -> dict:
    schema = SCHEMAS[command]
    if path is None:
        cfg = {}
    else:
        with open(path) as fh:
            cfg = json.load(fh)
    cfg = _validate(cfg, schema)
    seeds = cfg.get("seeds")
    if seeds is not None and len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_rows(path: Path, cfg: dict, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(
            f"# config_hash={config_hash(cfg)} "
            f"seeds={cfg.get('seeds', cfg.get('seed'))}\n"
        )
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(
                [x if isinstance(x, (str, int)) else repr(float(x)) for x in row]
            )


# ---------------------------------------------------------------------------
# Linear closed-form sweep (state-noise vs input-noise panels)
# ---------------------------------------------------------------------------


def run_lin_noise_sweep(cfg: dict, out_dir: Path) -> dict:
    sys = example_system()
    K_star = lti_world.lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
    x0_model = NoiseModel.isotropic_gaussian(1.0, 2)
    results = []
    panel_rows = {}
    for panel in ("high_state", "high_input"):
        sx = cfg[panel]["sigma_xi"]
        se = cfg[panel]["sigma_eta"]
        xi_model = NoiseModel.isotropic_gaussian(sx**2, 2)
        eta_model = NoiseModel.isotropic_gaussian(se**2, 1)
        ratios = {H: [] for H in cfg["h_list"]}
        for seed in cfg["seeds"]:
            rng = RngStream(seed)
            ds = lti_world.generate_expert_dataset(
                sys, K_star, cfg["n_traj"], cfg["T"], x0_model, xi_model,
                eta_model, rng.substream(0),
            )
            K_bc = ll.fit_bc(ds)
            eval_rng = rng.substream(1)
            bc_res = eval_metrics.max_discrepancy(
                sys, K_star, K_bc, cfg["n_test"], cfg["T"], x0_model,
                xi_model, eval_rng.substream(0),
            )
            results.append((panel, "bc", 0, seed, "discrepancy", bc_res.mean))
            for H in cfg["h_list"]:
                G = ll.fit_predictors_ols(ds, H, ridge=cfg["ridge"])
                w = ll.LossWeightsLinear(
                    Q=np.eye(2), R=np.eye(1), P=np.eye(2), H=H,
                    alpha=cfg["alpha"],
                )
                K_pil = ll.fit_pil_fixed_G(ds, sys, G, w)
                pil_res = eval_metrics.max_discrepancy(
                    sys, K_star, K_pil, cfg["n_test"], cfg["T"], x0_model,
                    xi_model, eval_rng.substream(H),
                )
                ratio = pil_res.mean / bc_res.mean
                ratios[H].append(ratio)
                results.append(
                    (panel, "pil", H, seed, "discrepancy", pil_res.mean)
                )
                results.append((panel, "pil", H, seed, "ratio_to_bc", ratio))
        panel_rows[panel] = [
            (
                H,
                float(np.mean(ratios[H])),
                float(0.5 * np.std(ratios[H])),
            )
            for H in cfg["h_list"]
        ]
    _write_rows(
        out_dir / "lin_noise_sweep_results.csv",
        cfg,
        ["experiment", "method", "H", "seed", "metric", "value"],
        results,
    )
    for panel, rows in panel_rows.items():
        _write_rows(
            out_dir / f"lin_noise_sweep_plot_{panel}.csv",
            cfg,
            ["H", "pil_over_bc_mean", "half_std"],
            rows,
        )
    return {
        panel: {H: mean for H, mean, _ in rows}
        for panel, rows in panel_rows.items()
    }


# ---------------------------------------------------------------------------
# Linear system + random-MLP expert, NN-trained methods
# ---------------------------------------------------------------------------


def _nn_loss_cfg(cfg: dict, mode: str, H: int, state_dim: int, input_dim: int,
                 dynamics_gradient: bool = True) -> PilLossConfig:
    return PilLossConfig(
        Q=cfg["q_weight"] * np.eye(state_dim),
        R=cfg["r_weight"] * np.eye(input_dim),
        P=cfg["p_weight"] * np.eye(state_dim),
        H=H,
        alpha=cfg["alpha"],
        mode=mode,
        dynamics_gradient=dynamics_gradient,
    )


def _train_method(
    method: str,
    dyn,
    dataset,
    cfg: dict,
    H: int,
    rng: RngStream,
    encoder=nw.ObsEncoder("raw"),
    dynamics_gradient: bool = True,
):
    state_dim, input_dim = dyn.state_dim, dyn.input_dim
    obs_dim = encoder.obs_dim(state_dim)
    if method == "pil":
        model = build_pil_model(
            obs_dim, state_dim, input_dim, H, rng.substream(0),
            latent_dim=cfg["latent_dim"],
            encoder_hidden=tuple(cfg["encoder_hidden"]),
            predictor_hidden=tuple(cfg["predictor_hidden"]),
            policy_hidden=tuple(cfg["policy_hidden"]),
        )
    else:
        model = build_policy_model(
            state_dim, input_dim, rng.substream(0),
            policy_hidden=tuple(cfg["policy_hidden"]),
        )
    loss_cfg = _nn_loss_cfg(
        cfg, method if method in ("pil", "rollout") else "bc", H,
        state_dim, input_dim, dynamics_gradient,
    )
    log = train(
        model, dyn, dataset, loss_cfg, cfg["epochs"], cfg["batch_size"],
        rng.substream(1), cfg["lr_start"], cfg["lr_end"], encoder,
    )
    return model, log


def run_lin_pred_order(cfg: dict, out_dir: Path) -> dict:
    sys = example_system()
    dyn = nw.LinearDynamics(sys)
    x0_model = NoiseModel.isotropic_gaussian(1.0, 2)
    xi_model = NoiseModel.uniform([cfg["noise_bound"]] * 2)
    eta_model = NoiseModel.uniform([cfg["noise_bound"]])
    results = []
    summary = {}
    for seed in cfg["seeds"]:
        rng = RngStream(seed)
        expert = nw.mlp_expert_linear(sys, seed=1000 + seed)
        ds = nw.generate_nonlinear_dataset(
            dyn, expert, cfg["n_traj"], cfg["T"], x0_model, xi_model,
            eta_model, nw.ObsEncoder("raw"), rng.substream(0),
            expert_descriptor="random_mlp",
        )
        for H in cfg["h_list"]:
            for method in cfg["methods"]:
                model, _ = _train_method(
                    method, dyn, ds, cfg, H, rng.substream(10 + H)
                )
                pol = deploy_policy(model)
                res = eval_metrics.max_discrepancy(
                    dyn, expert, pol, cfg["n_test"], cfg["eval_T"], x0_model,
                    xi_model, rng.substream(500 + H),
                )
                results.append(("lin_pred_order", method, H, seed,
                                "discrepancy", res.mean))
                summary.setdefault((method, H), []).append(res.mean)
    _write_rows(
        out_dir / "lin_pred_order_results.csv",
        cfg,
        ["experiment", "method", "H", "seed", "metric", "value"],
        results,
    )
    plot = [
        (method, H, float(np.mean(vals)), float(0.5 * np.std(vals)))
        for (method, H), vals in sorted(summary.items())
    ]
    _write_rows(
        out_dir / "lin_pred_order_plot.csv",
        cfg,
        ["method", "H", "mean_discrepancy", "half_std"],
        plot,
    )
    return {k: float(np.mean(v)) for k, v in summary.items()}


# ---------------------------------------------------------------------------
# Pendulum gradient study
# ---------------------------------------------------------------------------

_PENDULUM_VARIANTS = {
    "bc": ("bc", True),
    "rollout": ("rollout", True),
    "rollout_nograd": ("rollout", False),
    "pil": ("pil", True),
    "pil_nograd": ("pil", False),
}


def run_pendulum(cfg: dict, out_dir: Path) -> dict:
    dyn = nw.PendulumDynamics()
    expert = nw.pendulum_expert()
    x0_model = nw.default_pendulum_x0_model()
    encoder = nw.ObsEncoder("trig_angle")
    results = []
    summary = {}
    for noise_case in cfg["noise_cases"]:
        if noise_case == "with":
            xi_model, eta_model = nw.pendulum_noise_models(
                cfg["angle_noise_deg"], cfg["rate_noise_deg"],
                cfg["input_noise"],
            )
        else:
            xi_model, eta_model = NoiseModel.none(), NoiseModel.none()
        for seed in cfg["seeds"]:
            rng = RngStream(seed)
            ds = nw.generate_nonlinear_dataset(
                dyn, expert, cfg["n_traj"], cfg["T"], x0_model, xi_model,
                eta_model, encoder, rng.substream(0),
                expert_descriptor="swingup_lqr",
            )
            for variant in cfg["variants"]:
                method, grad = _PENDULUM_VARIANTS[variant]
                model, _ = _train_method(
                    method, dyn, ds, cfg, cfg["h"], rng.substream(20),
                    encoder=encoder, dynamics_gradient=grad,
                )
                pol = deploy_policy(model)
                res = eval_metrics.max_discrepancy(
                    dyn, expert, pol, cfg["n_test"], cfg["T"], x0_model,
                    xi_model, rng.substream(900),
                )
                results.append(
                    ("pendulum_" + noise_case, variant, cfg["h"], seed,
                     "discrepancy", res.mean)
                )
                summary.setdefault((noise_case, variant), []).append(res.mean)
    _write_rows(
        out_dir / "pendulum_results.csv",
        cfg,
        ["experiment", "method", "H", "seed", "metric", "value"],
        results,
    )
    table = [
        (variant, noise_case, float(np.mean(vals)), float(0.5 * np.std(vals)))
        for (noise_case, variant), vals in sorted(summary.items())
    ]
    _write_rows(
        out_dir / "pendulum_table.csv",
        cfg,
        ["method", "noise_case", "mean_discrepancy", "half_std"],
        table,
    )
    return {k: float(np.mean(v)) for k, v in summary.items()}


# ---------------------------------------------------------------------------
# Theory scan
# ---------------------------------------------------------------------------


def run_theory_scan(cfg: dict, out_dir: Path) -> dict:
    sys = example_system()
    K_star = lti_world.lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
    H = cfg["h"]
    G_true = ll.PredictorSetLinear.true_closed_loop(sys, K_star, H)
    weights = ll.LossWeightsLinear(
        Q=np.eye(2), R=np.eye(1), P=np.eye(2), H=H, alpha=cfg["alpha"]
    )

    def fit_fn(ds):
        return ll.fit_pil_fixed_G(ds, sys, G_true, weights)

    rng = RngStream(cfg["seed"])
    fit = eval_metrics.scaling_scan(
        sys, K_star, fit_fn, cfg["t_grid"], cfg["sigma_xi_levels"],
        cfg["sigma_eta"], cfg["n_seeds"], rng.substream(0), H=H,
    )
    scaling_rows = []
    for i, sx in enumerate(fit.sigma_xi_levels):
        for j, te in enumerate(fit.t_eff):
            scaling_rows.append((float(sx), int(te), fit.mean_error[i, j]))
    _write_rows(
        out_dir / "theory_scaling.csv",
        cfg,
        ["sigma_xi", "t_eff", "mean_error"],
        scaling_rows,
    )
    _write_rows(
        out_dir / "theory_scaling_fit.csv",
        cfg,
        ["slope", "intercept"] + [
            f"floor_sigma_{sx}" for sx in fit.sigma_xi_levels
        ],
        [(fit.slope, fit.intercept, *fit.noise_floor)],
    )

    # Noise-term Monte Carlo over dataset draws
    x0_model = NoiseModel.isotropic_gaussian(1.0, 2)
    t2_rows = []
    t2_summary = {}
    for pi, (sx, se) in enumerate(cfg["noise_mc_sigma_pairs"]):
        xi_model = NoiseModel.isotropic_gaussian(sx**2, 2)
        eta_model = NoiseModel.isotropic_gaussian(se**2, 1)
        pil_norms = np.zeros(cfg["noise_mc_draws"])
        bc_norms = np.zeros(cfg["noise_mc_draws"])
        sub = rng.substream(100 + pi)
        report = None
        for d in range(cfg["noise_mc_draws"]):
            ds = lti_world.generate_expert_dataset(
                sys, K_star, cfg["noise_mc_n_traj"], cfg["noise_mc_T"],
                x0_model, xi_model, eta_model, sub.substream(d),
            )
            report = ll.compare_pil_bc(
                ds, sys, np.eye(2), np.eye(1), xi_model.scale, eta_model.scale
            )
            pil_norms[d] = np.linalg.norm(report.omega_pil)
            bc_norms[d] = np.linalg.norm(report.omega_bc)
        t2_rows.append(
            (sx, se, float(pil_norms.mean()), float(bc_norms.mean()),
             report.lhs, report.rhs, int(report.condition_holds))
        )
        t2_summary[(sx, se)] = (float(pil_norms.mean()), float(bc_norms.mean()))
    _write_rows(
        out_dir / "theory_noise_mc.csv",
        cfg,
        ["sigma_xi", "sigma_eta", "mean_omega_pil", "mean_omega_bc",
         "lhs", "rhs", "condition_holds"],
        t2_rows,
    )
    return {"slope": fit.slope, "floors": fit.noise_floor.tolist(),
            "noise_mc": t2_summary}


# ---------------------------------------------------------------------------
# Piecewise building blocks
# ---------------------------------------------------------------------------


def run_gen_data(cfg: dict, out_dir: Path) -> dict:
    rng = RngStream(cfg["seed"])
    if cfg["world"] == "linear":
        sys = example_system()
        K_star = lti_world.lqr_gain(sys, np.eye(2), 0.01 * np.eye(1))
        ds = lti_world.generate_expert_dataset(
            sys, K_star, cfg["n_traj"], cfg["T"],
            NoiseModel.isotropic_gaussian(1.0, 2),
            NoiseModel.isotropic_gaussian(cfg["sigma_xi"] ** 2, 2),
            NoiseModel.isotropic_gaussian(cfg["sigma_eta"] ** 2, 1),
            rng,
        )
    elif cfg["world"] == "pendulum":
        dyn = nw.PendulumDynamics()
        xi_model, eta_model = nw.pendulum_noise_models(
            input_bound=cfg["sigma_eta"]
        )
        ds = nw.generate_nonlinear_dataset(
            dyn, nw.pendulum_expert(), cfg["n_traj"], cfg["T"],
            nw.default_pendulum_x0_model(), xi_model, eta_model,
            nw.ObsEncoder("trig_angle"), rng,
            expert_descriptor="swingup_lqr",
        )
    else:
        raise ConfigError(f"unknown world {cfg['world']!r}")
    path = out_dir / cfg["dataset"]
    path.parent.mkdir(parents=True, exist_ok=True)
    lti_world.save_dataset(ds, path)
    return {"dataset": str(path)}


def _dyn_from_meta(meta: dict):
    d = meta.get("dynamics")
    if d is None or d.get("name") == "linear":
        if d is None:
            sys = example_system()
        else:
            sys = LtiSystem(np.asarray(d["A"]), np.asarray(d["B"]))
        return nw.LinearDynamics(sys)
    if d["name"] == "pendulum":
        return nw.PendulumDynamics(
            nw.PendulumParams(
                g=d["g"], l=d["l"], mass=d["mass"], dt=d["dt"],
                torque_limit=d["torque_limit"],
            )
        )
    raise ConfigError(f"unknown dynamics {d['name']!r}")


def run_train(cfg: dict, out_dir: Path) -> dict:
    ds = lti_world.load_dataset(out_dir / cfg["dataset"])
    dyn = _dyn_from_meta(ds.meta)
    encoder = nw.ObsEncoder(ds.meta.get("encoder", "raw"))
    rng = RngStream(cfg["seed"])
    method = cfg["method"]
    if method not in ("bc", "rollout", "pil"):
        raise ConfigError(f"unknown method {method!r}")
    model, log = _train_method(
        method, dyn, ds, cfg, cfg["h"], rng, encoder=encoder
    )
    ckpt = out_dir / cfg["checkpoint"]
    save_checkpoint(
        model.store, ckpt,
        specs={
            "method": method,
            "policy_widths": list(model.policy.spec.widths),
            "encoder": encoder.kind,
        },
    )
    log.to_csv(out_dir / cfg["train_log"])
    return {"checkpoint": str(ckpt), "final_loss": log.final_total}


def run_eval(cfg: dict, out_dir: Path) -> dict:
    from .autodiff import Mlp, MlpSpec, load_checkpoint

    ds = lti_world.load_dataset(out_dir / cfg["dataset"])
    dyn = _dyn_from_meta(ds.meta)
    store, specs = load_checkpoint(out_dir / cfg["checkpoint"])
    policy_net = Mlp.from_store(
        MlpSpec(tuple(specs["policy_widths"])), store, "policy"
    )
    pol = lambda y: policy_net.forward_np(y)  # noqa: E731
    if ds.meta.get("dynamics", {"name": "linear"}).get("name") == "pendulum":
        expert = nw.pendulum_expert()
        x0_model = nw.default_pendulum_x0_model()
    else:
        sysm = _dyn_from_meta(ds.meta).sys
        expert = lti_world.lqr_gain(sysm, np.eye(sysm.n), 0.01 * np.eye(sysm.m))
        x0_model = NoiseModel.isotropic_gaussian(1.0, dyn.state_dim)
    xi_model = lti_world.noise_from_meta(ds.meta["xi_model"])
    rng = RngStream(cfg["seed"])
    res = eval_metrics.max_discrepancy(
        dyn, expert, pol, cfg["n_test"], cfg["T"], x0_model, xi_model, rng
    )
    _write_rows(
        out_dir / cfg["results"],
        cfg,
        ["experiment", "method", "H", "seed", "metric", "value"],
        [("eval", specs.get("method", "?"), 0, cfg["seed"],
          "discrepancy", res.mean),
         ("eval", specs.get("method", "?"), 0, cfg["seed"],
          "discrepancy_half_std", res.half_std)],
    )
    return {"discrepancy": res.mean}


COMMANDS = {
    "lin-noise-sweep": run_lin_noise_sweep,
    "lin-pred-order": run_lin_pred_order,
    "pendulum": run_pendulum,
    "theory-scan": run_theory_scan,
    "gen-data": run_gen_data,
    "train": run_train,
    "eval": run_eval,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pil-lab",
        description="imitation-learning experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seeds", type=int, default=None,
                       help="override: use seeds 0..N-1")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.command)
        if args.seeds is not None and "seeds" in cfg:
            cfg["seeds"] = list(range(args.seeds))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=_sys.stderr)
        return EXIT_IO
    print(json.dumps({"command": args.command, "out": str(out_dir)}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
