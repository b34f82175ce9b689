"""Config-driven batch front end.

Every subcommand reads a JSON config validated against a published schema
(unknown keys are rejected), runs one experiment, and writes its outputs
into the config's ``out_dir`` (overridable with the SBRIDGE_OUT_DIR
environment variable).  All floating-point output is written with 17
significant digits and every command is deterministic under a fixed seed.

Exit codes: 0 success, 2 validation failure, 3 numerical non-convergence,
4 enumeration cap exceeded.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click
import jsonschema
import numpy as np

from .bridge import pinned_kernel_matrix, sample_bridge_states
from .exceptions import CapExceededError, ConfigSchemaError, SBridgeError
from .graphs import GraphVocab, LabeledGraph, enumerate_graph_space, load_graph
from .imf import ImfSolver, imf_diagnostics
from .measures import Coupling, ReciprocalMeasure, markov_projection, markov_projection_reverse
from .process import NoiseSchedule, Prior, ReferenceProcess, build_schedule, geometric_schedule
from .qap import QapSolverConfig, build_qap_cost, exhaustive_qap, solve_qap
from .sinkhorn import SinkhornSolver
from .tabular import (
    TabularPredictor,
    TrainConfig,
    _LossContext,
    approximate_imf,
    exact_posterior_predictor,
    predictor_step_kernel,
    train,
)
from .validation import check_probability_vector

EXIT_VALIDATION = 2
EXIT_NON_CONVERGENCE = 3
EXIT_CAP = 4

SCHEDULE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_steps"],
    "properties": {
        "kind": {"enum": ["cosine", "geometric"]},
        "n_steps": {"type": "integer", "minimum": 2},
        "alpha_min": {"type": "number"},
        "alpha_bar_tau": {"type": "number"},
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "s_offset": {"type": "number", "minimum": 0},
    },
}

PRIOR_SCHEMA = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 2},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["uniform"],
            "properties": {"uniform": {"type": "integer", "minimum": 2}},
        },
    ]
}

IMF_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iters": {"type": "integer", "minimum": 1},
        "tol_coupling_tv": {"type": "number", "exclusiveMinimum": 0},
        "alternate_direction": {"type": "boolean"},
        "log_kl_to_oracle": {"type": "boolean"},
    },
}

SINKHORN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iters": {"type": "integer", "minimum": 1},
        "tol_marginal": {"type": "number", "exclusiveMinimum": 0},
        "log_domain": {"type": "boolean"},
    },
}

QAP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "method": {"enum": ["mpm", "sm"]},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "max_iters": {"type": "integer", "minimum": 1},
        "noise_coeff": {"type": "number", "minimum": 0},
        "n_trials": {"type": "integer", "minimum": 1},
        "step_size": {"type": "number", "exclusiveMinimum": 0},
        "update": {"enum": ["score", "paper"]},
    },
}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "n_epochs": {"type": "integer", "minimum": 1},
        "batch": {"type": ["integer", "null"], "minimum": 1},
    },
}

VOCAB_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["node_labels", "edge_labels"],
    "properties": {
        "node_labels": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "edge_labels": {"type": "array", "items": {"type": "string"}, "minItems": 2},
        "node_prior": {"type": "array", "items": {"type": "number"}},
        "edge_prior": {"type": "array", "items": {"type": "number"}},
    },
}

COMMAND_SCHEMAS = {
    "schedule": {
        "type": "object",
        "additionalProperties": False,
        "required": ["schedule", "out_dir"],
        "properties": {"schedule": SCHEDULE_SCHEMA, "out_dir": {"type": "string"}},
    },
    "imf": {
        "type": "object",
        "additionalProperties": False,
        "required": ["schedule", "prior", "gamma_csv", "xi_csv", "out_dir"],
        "properties": {
            "schedule": SCHEDULE_SCHEMA,
            "prior": PRIOR_SCHEMA,
            "gamma_csv": {"type": "string"},
            "xi_csv": {"type": "string"},
            "imf": IMF_SCHEMA,
            "sinkhorn": SINKHORN_SCHEMA,
            "labels": {"type": "array", "items": {"type": "string"}},
            "seed": {"type": "integer"},
            "out_dir": {"type": "string"},
        },
    },
    "match": {
        "type": "object",
        "additionalProperties": False,
        "required": ["schedule", "out_dir"],
        "properties": {
            "schedule": SCHEDULE_SCHEMA,
            "qap": QAP_SCHEMA,
            "seed": {"type": "integer"},
            "out_dir": {"type": "string"},
        },
    },
    "graph-imf": {
        "type": "object",
        "additionalProperties": False,
        "required": ["schedule", "vocab", "n", "gamma_csv", "xi_csv", "out_dir"],
        "properties": {
            "schedule": SCHEDULE_SCHEMA,
            "vocab": VOCAB_SCHEMA,
            "n": {"type": "integer", "minimum": 1},
            "cap": {"type": "integer", "minimum": 1},
            "gamma_csv": {"type": "string"},
            "xi_csv": {"type": "string"},
            "imf": IMF_SCHEMA,
            "sinkhorn": SINKHORN_SCHEMA,
            "seed": {"type": "integer"},
            "out_dir": {"type": "string"},
        },
    },
    "sample": {
        "type": "object",
        "additionalProperties": False,
        "required": ["schedule", "prior", "x0", "z", "n_paths", "out_dir"],
        "properties": {
            "schedule": SCHEDULE_SCHEMA,
            "prior": PRIOR_SCHEMA,
            "labels": {"type": "array", "items": {"type": "string"}},
            "x0": {"type": "integer", "minimum": 0},
            "z": {"type": "integer", "minimum": 0},
            "n_paths": {"type": "integer", "minimum": 1},
            "n_save_paths": {"type": "integer", "minimum": 0},
            "seed": {"type": "integer"},
            "out_dir": {"type": "string"},
        },
    },
    "train-tabular": {
        "type": "object",
        "additionalProperties": False,
        "required": ["schedule", "prior", "mode", "out_dir"],
        "properties": {
            "schedule": SCHEDULE_SCHEMA,
            "prior": PRIOR_SCHEMA,
            "mode": {"enum": ["train", "grad-check", "approximate-imf"]},
            "direction": {"enum": ["forward", "backward"]},
            "coupling_csv": {"type": "string"},
            "gamma_csv": {"type": "string"},
            "xi_csv": {"type": "string"},
            "train": TRAIN_SCHEMA,
            "n_outer": {"type": "integer", "minimum": 1},
            "n_check_coords": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer"},
            "out_dir": {"type": "string"},
        },
    },
}


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def load_config(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigSchemaError(f"config {path} is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, COMMAND_SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        path_str = "$" + "".join(f".{p}" if isinstance(p, str) else f"[{p}]" for p in exc.absolute_path)
        raise ConfigSchemaError(f"config {path}: {exc.message} (at {path_str})") from None
    return doc


def build_schedule_from_config(block: dict) -> NoiseSchedule:
    kind = block.get("kind", "cosine")
    tau = block.get("tau", 1.0)
    if kind == "cosine":
        if "alpha_min" not in block:
            raise ConfigSchemaError("schedule.alpha_min is required for cosine schedules")
        return build_schedule(
            block["n_steps"], block["alpha_min"], tau=tau, s_offset=block.get("s_offset", 0.008)
        )
    if "alpha_bar_tau" not in block:
        raise ConfigSchemaError("schedule.alpha_bar_tau is required for geometric schedules")
    return geometric_schedule(block["n_steps"], block["alpha_bar_tau"], tau=tau)


def build_prior_from_config(block) -> Prior:
    if isinstance(block, dict):
        return Prior.uniform(block["uniform"])
    return Prior(np.asarray(block, dtype=float))


def load_marginal_csv(path: str, d: int | None = None) -> np.ndarray:
    """Two-column CSV (label, probability) with a header row."""
    if not os.path.exists(path):
        raise ConfigSchemaError(f"marginal file not found: {path}")
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    values = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 2:
            raise ConfigSchemaError(f"marginal file {path}: expected 'label,probability' rows")
        try:
            values.append(float(parts[1]))
        except ValueError:
            raise ConfigSchemaError(f"marginal file {path}: non-numeric probability {parts[1]!r}") from None
    try:
        return check_probability_vector(np.array(values), f"marginal file {path}", d=d)
    except SBridgeError as exc:
        raise ConfigSchemaError(str(exc)) from None


def write_marginal_csv(path: str, v: np.ndarray, labels=None) -> None:
    labels = labels or [f"s{i}" for i in range(len(v))]
    with open(path, "w") as fh:
        fh.write("label,probability\n")
        for lab, x in zip(labels, v):
            fh.write(f"{lab},{fmt(x)}\n")


def out_dir_of(cfg: dict) -> str:
    out = os.environ.get("SBRIDGE_OUT_DIR", cfg["out_dir"])
    os.makedirs(out, exist_ok=True)
    return out


def write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def guard(fn):
    """Map package errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CapExceededError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CAP)
        except (SBridgeError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


@click.group()
def main():
    """Exact bridge solvers over finite state spaces and labeled graphs."""


@main.command("schedule")
@click.option("--config", "config_path", required=True, type=click.Path())
@guard
def cmd_schedule(config_path):
    """Write a retention schedule as CSV plus a summary JSON."""
    cfg = load_config(config_path, "schedule")
    sched = build_schedule_from_config(cfg["schedule"])
    out = out_dir_of(cfg)
    sched.to_csv(os.path.join(out, "schedule.csv"))
    summary = {
        "n_steps": sched.n_steps,
        "tau": float(sched.tau),
        "alpha_bar_tau": float(sched.alpha_bar[-1]),
        "min_alpha": float(sched.alpha[1:].min()),
    }
    write_json(os.path.join(out, "summary.json"), summary)
    click.echo(f"alpha_bar(tau) = {fmt(summary['alpha_bar_tau'])}")


def _run_imf_files(process, gamma, xi, cfg, out, labels=None):
    imf_block = cfg.get("imf", {})
    sink_block = cfg.get("sinkhorn", {})
    solver = ImfSolver(
        process,
        max_iters=imf_block.get("max_iters", 50),
        tol_coupling_tv=imf_block.get("tol_coupling_tv", 1e-10),
        alternate_direction=imf_block.get("alternate_direction", True),
        log_kl_to_oracle=imf_block.get("log_kl_to_oracle", True),
        oracle_max_iters=sink_block.get("max_iters", 100_000),
        oracle_tol=sink_block.get("tol_marginal", 1e-12),
    ).fit(gamma, xi)
    solver.coupling_.to_csv(os.path.join(out, "coupling.csv"), labels=labels)
    verdict = {
        "converged": bool(solver.converged_),
        "iterations": int(solver.n_iter_),
        "final_tv_change": float(solver.trace_.records[-1].tv_change),
    }
    if solver.log_kl_to_oracle:
        solver.oracle_coupling_.to_csv(os.path.join(out, "oracle_coupling.csv"), labels=labels)
        diag = imf_diagnostics(solver.trace_)
        verdict["tv_to_oracle"] = 0.5 * float(
            np.abs(solver.coupling_.entries - solver.oracle_coupling_.entries).sum()
        )
        verdict["monotone"] = bool(diag["monotone"])
    solver.trace_.to_csv(os.path.join(out, "trace.csv"))
    return solver, verdict


@main.command("imf")
@click.option("--config", "config_path", required=True, type=click.Path())
@guard
def cmd_imf(config_path):
    """Run the exact fitting loop against the Sinkhorn oracle."""
    cfg = load_config(config_path, "imf")
    sched = build_schedule_from_config(cfg["schedule"])
    prior = build_prior_from_config(cfg["prior"])
    process = ReferenceProcess(sched, prior)
    gamma = load_marginal_csv(cfg["gamma_csv"], d=process.d)
    xi = load_marginal_csv(cfg["xi_csv"], d=process.d)
    out = out_dir_of(cfg)
    solver, verdict = _run_imf_files(process, gamma, xi, cfg, out, labels=cfg.get("labels"))
    write_json(os.path.join(out, "verdict.json"), verdict)
    click.echo(json.dumps(verdict, sort_keys=True))
    if not verdict["converged"]:
        sys.exit(EXIT_NON_CONVERGENCE)


@main.command("match")
@click.argument("g1_path", type=click.Path())
@click.argument("g2_path", type=click.Path())
@click.argument("vocab_path", type=click.Path())
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--exhaustive", is_flag=True, help="Cross-check against the exhaustive oracle (n <= 8).")
@guard
def cmd_match(g1_path, g2_path, vocab_path, config_path, seed, exhaustive):
    """Match two graph JSON files; writes assignment.json."""
    cfg = load_config(config_path, "match")
    for p in (g1_path, g2_path, vocab_path):
        if not os.path.exists(p):
            raise ConfigSchemaError(f"input file not found: {p}")
    with open(vocab_path) as fh:
        vocab_doc = json.load(fh)
    jsonschema.validate(vocab_doc, VOCAB_SCHEMA)
    if "node_prior" not in vocab_doc:
        vocab_doc["node_prior"] = [1.0 / len(vocab_doc["node_labels"])] * len(vocab_doc["node_labels"])
    if "edge_prior" not in vocab_doc:
        vocab_doc["edge_prior"] = [1.0 / len(vocab_doc["edge_labels"])] * len(vocab_doc["edge_labels"])
    vocab = GraphVocab.from_json(vocab_doc)
    g1, g2 = load_graph(g1_path, vocab), load_graph(g2_path, vocab)
    sched = build_schedule_from_config(cfg["schedule"])
    qap_block = cfg.get("qap", {})
    solver_cfg = QapSolverConfig(
        method=qap_block.get("method", "mpm"),
        tolerance=qap_block.get("tolerance", 1e-4),
        max_iters=qap_block.get("max_iters", 2500),
        noise_coeff=qap_block.get("noise_coeff", 1e-6),
        n_trials=qap_block.get("n_trials", 10),
        step_size=qap_block.get("step_size", 1.0),
        update=qap_block.get("update", "score"),
    )
    used_seed = seed if seed is not None else cfg.get("seed", 0)
    cost = build_qap_cost(vocab, sched, g1, g2)
    assignment, nll, trials = solve_qap(cost, solver_cfg, used_seed)
    doc = {
        "mapping": [int(x) for x in assignment.mapping],
        "nll": float(nll),
        "seed": int(used_seed),
        "trials": trials,
    }
    if exhaustive:
        _, oracle_nll = exhaustive_qap(cost)
        doc["exhaustive_nll"] = float(oracle_nll)
        doc["gap"] = float(nll - oracle_nll)
    out = out_dir_of(cfg)
    write_json(os.path.join(out, "assignment.json"), doc)
    click.echo(json.dumps({"nll": doc["nll"], "mapping": doc["mapping"]}, sort_keys=True))


@main.command("graph-imf")
@click.option("--config", "config_path", required=True, type=click.Path())
@guard
def cmd_graph_imf(config_path):
    """Exact fitting loop on an enumerated tiny graph space."""
    cfg = load_config(config_path, "graph-imf")
    vocab = GraphVocab.from_json(
        {
            **cfg["vocab"],
            "node_prior": cfg["vocab"].get(
                "node_prior", [1.0 / len(cfg["vocab"]["node_labels"])] * len(cfg["vocab"]["node_labels"])
            ),
            "edge_prior": cfg["vocab"].get(
                "edge_prior", [1.0 / len(cfg["vocab"]["edge_labels"])] * len(cfg["vocab"]["edge_labels"])
            ),
        }
    )
    space = enumerate_graph_space(vocab, cfg["n"], cap=cfg.get("cap", 10_000))
    sched = build_schedule_from_config(cfg["schedule"])
    process = space.reference_process(sched)
    gamma = load_marginal_csv(cfg["gamma_csv"], d=space.size)
    xi = load_marginal_csv(cfg["xi_csv"], d=space.size)
    out = out_dir_of(cfg)
    labels = space.labels()
    solver, verdict = _run_imf_files(process, gamma, xi, cfg, out, labels=labels)
    mismatch = space.mismatch_matrix()
    verdict["expected_mismatch_final"] = float((solver.coupling_.entries * mismatch).sum())
    verdict["expected_mismatch_independent"] = float((np.outer(gamma, xi) * mismatch).sum())
    verdict["space_size"] = space.size
    write_json(os.path.join(out, "verdict.json"), verdict)
    click.echo(json.dumps(verdict, sort_keys=True))
    if not verdict["converged"]:
        sys.exit(EXIT_NON_CONVERGENCE)


@main.command("sample")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@guard
def cmd_sample(config_path, seed):
    """Sample endpoint-conditioned paths; writes paths and marginal checks."""
    cfg = load_config(config_path, "sample")
    sched = build_schedule_from_config(cfg["schedule"])
    prior = build_prior_from_config(cfg["prior"])
    process = ReferenceProcess(sched, prior)
    d = process.d
    labels = cfg.get("labels", [f"s{i}" for i in range(d)])
    if len(labels) != d:
        raise ConfigSchemaError(f"labels must have length {d}")
    x0, z = cfg["x0"], cfg["z"]
    if not (0 <= x0 < d and 0 <= z < d):
        raise ConfigSchemaError(f"x0 and z must be state indices in [0, {d})")
    used_seed = seed if seed is not None else cfg.get("seed", 0)
    rng = np.random.default_rng(used_seed)
    n_paths = cfg["n_paths"]
    states = sample_bridge_states(process, x0, z, n_paths, rng)

    out = out_dir_of(cfg)
    n_save = min(cfg.get("n_save_paths", min(n_paths, 100)), n_paths)
    times = sched.times
    with open(os.path.join(out, "paths.csv"), "w") as fh:
        fh.write("path_id,t,state_label\n")
        for p in range(n_save):
            fh.write(f"{p},{fmt(0.0)},{labels[states[p, 0]]}\n")
            changed = np.nonzero(states[p, 1:] != states[p, :-1])[0]
            for k in changed:
                fh.write(f"{p},{fmt(times[k + 1])},{labels[states[p, k + 1]]}\n")

    with open(os.path.join(out, "marginals.csv"), "w") as fh:
        fh.write("t,state_label,empirical,analytic\n")
        for k in range(sched.n_steps + 1):
            analytic = (
                pinned_kernel_matrix(process, 0, k, z)[x0] if k > 0 else np.eye(d)[x0]
            )
            counts = np.bincount(states[:, k], minlength=d) / n_paths
            for s in range(d):
                fh.write(f"{fmt(times[k])},{labels[s]},{fmt(counts[s])},{fmt(analytic[s])}\n")
    summary = {
        "n_paths": int(n_paths),
        "endpoint_hit_rate": float((states[:, -1] == z).mean()),
        "seed": int(used_seed),
    }
    write_json(os.path.join(out, "summary.json"), summary)
    click.echo(json.dumps(summary, sort_keys=True))


@main.command("train-tabular")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@guard
def cmd_train_tabular(config_path, seed):
    """Train the tabular predictor, check gradients, or run approximate fitting."""
    cfg = load_config(config_path, "train-tabular")
    sched = build_schedule_from_config(cfg["schedule"])
    prior = build_prior_from_config(cfg["prior"])
    process = ReferenceProcess(sched, prior)
    used_seed = seed if seed is not None else cfg.get("seed", 0)
    train_block = cfg.get("train", {})
    tcfg = TrainConfig(
        learning_rate=train_block.get("learning_rate", 1.0),
        n_epochs=train_block.get("n_epochs", 2000),
        batch=train_block.get("batch"),
        seed=used_seed,
    )
    direction = cfg.get("direction", "forward")
    out = out_dir_of(cfg)

    if "coupling_csv" in cfg:
        coupling = Coupling.from_csv(cfg["coupling_csv"])
    elif "gamma_csv" in cfg and "xi_csv" in cfg:
        gamma = load_marginal_csv(cfg["gamma_csv"], d=process.d)
        xi = load_marginal_csv(cfg["xi_csv"], d=process.d)
        coupling = Coupling.independent(gamma, xi)
    else:
        raise ConfigSchemaError("provide coupling_csv, or both gamma_csv and xi_csv")

    mode = cfg["mode"]
    if mode == "grad-check":
        rng = np.random.default_rng(used_seed)
        ctx = _LossContext(coupling, process, direction)
        logits = rng.normal(0.0, 0.5, (process.n_steps, process.d, process.d))
        _, grad = ctx.loss_and_grad(TabularPredictor(logits))
        h = 1e-5
        max_rel = 0.0
        for _ in range(cfg.get("n_check_coords", 100)):
            k = rng.integers(process.n_steps)
            x = rng.integers(process.d)
            zz = rng.integers(process.d)
            lp, lm = logits.copy(), logits.copy()
            lp[k, x, zz] += h
            lm[k, x, zz] -= h
            fd = (ctx.loss(TabularPredictor(lp)) - ctx.loss(TabularPredictor(lm))) / (2 * h)
            rel = abs(fd - grad[k, x, zz]) / max(abs(fd), abs(grad[k, x, zz]), 1e-12)
            max_rel = max(max_rel, rel)
        verdict = {"mode": mode, "max_relative_gradient_error": max_rel, "seed": int(used_seed)}
        write_json(os.path.join(out, "verdict.json"), verdict)
        click.echo(json.dumps(verdict, sort_keys=True))
        return

    if mode == "train":
        result = train(
            TabularPredictor.zeros(process.n_steps, process.d), coupling, sched, prior, tcfg, direction
        )
        with open(os.path.join(out, "loss_curve.csv"), "w") as fh:
            fh.write("step,loss,grad_norm\n")
            for i, (lo, gn) in enumerate(zip(result.loss_curve, result.grad_norms)):
                fh.write(f"{i},{fmt(lo)},{fmt(gn)}\n")
        write_json(os.path.join(out, "checkpoint.json"), result.predictor.to_json())
        rec = ReciprocalMeasure(coupling=coupling, process=process)
        if direction == "forward":
            exact_kernels = markov_projection(rec).kernels
        else:
            exact_kernels = markov_projection_reverse(rec).kernels
        err = max(
            float(
                np.abs(
                    predictor_step_kernel(result.predictor.weights(k), process, k, direction)
                    - exact_kernels[k]
                ).max()
            )
            for k in range(process.n_steps)
        )
        verdict = {
            "mode": mode,
            "diverged": bool(result.diverged),
            "final_loss": float(result.loss_curve[-1]),
            "kernel_max_abs_error": err,
            "seed": int(used_seed),
        }
        write_json(os.path.join(out, "verdict.json"), verdict)
        click.echo(json.dumps(verdict, sort_keys=True))
        if result.diverged:
            sys.exit(EXIT_NON_CONVERGENCE)
        return

    # approximate-imf
    gamma, xi = coupling.marginals()
    final, trace = approximate_imf(
        gamma, xi, sched, prior, tcfg, n_outer=cfg.get("n_outer", 6)
    )
    final.to_csv(os.path.join(out, "coupling.csv"))
    oracle = SinkhornSolver(process, tol_marginal=1e-12).fit(gamma, xi).coupling_
    oracle.to_csv(os.path.join(out, "oracle_coupling.csv"))
    tv = 0.5 * float(np.abs(final.entries - oracle.entries).sum())
    verdict = {
        "mode": mode,
        "tv_to_oracle": tv,
        "n_outer": len(trace),
        "seed": int(used_seed),
        "outer_trace": [
            {
                "iteration": r.iteration,
                "direction": r.direction,
                "tv_change": r.tv_change,
                "final_loss": r.final_loss,
                "tv_terminal_error": r.tv_terminal_error,
            }
            for r in trace
        ],
    }
    write_json(os.path.join(out, "verdict.json"), verdict)
    click.echo(json.dumps({"tv_to_oracle": tv}, sort_keys=True))


if __name__ == "__main__":
    main()
