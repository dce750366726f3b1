"""Experiment harness: validated configs, sweeps, artifacts, pass/fail.

A run takes a set of coefficient fields and a decreasing list of
oscillation periods ``epsilon``, computes correctors and the effective
tensor once per field, then for every ``epsilon`` compares expansions of
the requested orders against a resolved fine solve.  A second "null"
fine solve per ``epsilon`` -- same load and grid, coefficient frozen to
the constant ``a0`` -- measures the discretization floor; sweep points
whose error is within ``FLOOR_FACTOR`` of the floor are excluded from
rate fits (they measure the grid, not homogenization).
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
from pathlib import Path

import numpy as np

from .coeff_fields import ConstantField, field_from_config
from .correctors import compute_correctors
from .fine_reference import solve_fine
from .periodic_fem import build_grid
from .two_scale import (
    ERROR_COLUMNS,
    ExpansionOrder,
    error_report,
    fit_rate,
    manufactured_macro,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunSummary",
    "validate_config",
    "load_config",
    "run",
    "RATE_BANDS",
    "FLOOR_FACTOR",
]

#: Homogenization error must exceed this multiple of the discretization
#: floor for a sweep point to enter a rate fit.
FLOOR_FACTOR = 5.0

#: Accepted slope windows: (norm, order) -> (low, high).
RATE_BANDS = {
    ("Linf_global", ExpansionOrder.ZEROTH): (0.7, 1.3),
    ("H1_global", ExpansionOrder.FIRST): (0.35, 0.75),
    ("W1inf_interior", ExpansionOrder.FIRST): (0.7, 1.3),
    ("flux_Linf_interior", ExpansionOrder.FIRST): (0.7, 1.3),
}

#: Compatibility-residual ceilings for the second cell problem.
COMPAT_LIMIT_SMOOTH = 1e-6
COMPAT_LIMIT_PIECEWISE = 1e-8

_ORDER_NAMES = {"zeroth": ExpansionOrder.ZEROTH, "first": ExpansionOrder.FIRST,
                "second": ExpansionOrder.SECOND}


class ConfigError(Exception):
    """Invalid experiment config; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ExperimentConfig:
    """Validated experiment parameters.

    Use ``validate_config`` to build one from a raw mapping.
    """

    def __init__(self, fields, cell_grid, epsilons, resolution_factor, orders,
                 output_dir=None, workers=1):
        self.fields = fields
        self.cell_grid = cell_grid
        self.epsilons = epsilons
        self.resolution_factor = resolution_factor
        self.orders = orders
        self.output_dir = output_dir
        self.workers = workers


def _parse_order(entry):
    if isinstance(entry, str) and entry.lower() in _ORDER_NAMES:
        return _ORDER_NAMES[entry.lower()]
    return ExpansionOrder(entry)  # raises ValueError for bad ints


_KNOWN_KEYS = {
    "schema_version", "fields", "cell_grid", "epsilons", "resolution_factor",
    "orders", "output_dir", "workers",
}


def validate_config(raw):
    """Check a raw config mapping and build an ``ExperimentConfig``.

    All violations are collected and reported together in the raised
    ``ConfigError``, each prefixed with the offending key.
    """
    if not isinstance(raw, dict):
        raise ConfigError([f"config must be a mapping, got {type(raw).__name__}"])
    bad = []

    for key in sorted(set(raw) - _KNOWN_KEYS):
        bad.append(f"{key}: unknown config key")

    version = raw.get("schema_version", 1)
    if version != 1:
        bad.append(f"schema_version: expected 1, got {version!r}")

    fields = []
    entries = raw.get("fields")
    if not isinstance(entries, list) or not entries:
        bad.append("fields: required non-empty list of presets or field specs")
    else:
        for i, entry in enumerate(entries):
            try:
                fields.append(field_from_config(entry))
            except Exception as exc:
                bad.append(f"fields[{i}]: {exc}")
        names = [f.name for f in fields]
        if len(set(names)) != len(names):
            bad.append("fields: names must be unique")

    cell_grid = raw.get("cell_grid")
    if not isinstance(cell_grid, int) or isinstance(cell_grid, bool) or cell_grid < 2:
        bad.append(f"cell_grid: integer >= 2 required, got {cell_grid!r}")
    else:
        for field in fields:
            split = getattr(field, "split", None)
            if split is not None and abs(split * cell_grid - round(split * cell_grid)) > 1e-9:
                bad.append(
                    f"cell_grid: {cell_grid} does not align the {field.name} "
                    f"interface at y1={split} with grid lines"
                )

    epsilons = raw.get("epsilons")
    if not isinstance(epsilons, list) or not epsilons:
        bad.append("epsilons: required non-empty list")
        epsilons = []
    else:
        epsilons = [float(e) for e in epsilons]
        for e in epsilons:
            if e <= 0.0 or abs(1.0 / e - round(1.0 / e)) > 1e-9 / e:
                bad.append(f"epsilons: {e!r} is not the reciprocal of a positive integer")
        if list(epsilons) != sorted(epsilons, reverse=True) or len(set(epsilons)) != len(epsilons):
            bad.append("epsilons: must be strictly decreasing")

    factor = raw.get("resolution_factor", 8)
    if not isinstance(factor, int) or isinstance(factor, bool) or factor < 8:
        bad.append(f"resolution_factor: integer >= 8 required, got {factor!r}")

    raw_orders = raw.get("orders", ["zeroth", "first", "second"])
    orders = []
    if not isinstance(raw_orders, list) or not raw_orders:
        bad.append("orders: must be a non-empty list")
    else:
        for entry in raw_orders:
            try:
                orders.append(_parse_order(entry))
            except (KeyError, ValueError):
                bad.append(f"orders: {entry!r} is not one of zeroth/first/second or 0/1/2")
        if len(set(orders)) != len(orders):
            bad.append("orders: duplicates not allowed")
        orders = sorted(set(orders))

    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        bad.append(f"output_dir: string path required, got {output_dir!r}")

    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        bad.append(f"workers: integer >= 1 required, got {workers!r}")

    if bad:
        raise ConfigError(bad)
    return ExperimentConfig(
        fields=fields,
        cell_grid=cell_grid,
        epsilons=epsilons,
        resolution_factor=factor,
        orders=orders,
        output_dir=Path(output_dir) if output_dir else None,
        workers=workers,
    )


def load_config(path):
    """Read and validate a JSON config file."""
    with open(path, encoding="utf-8") as fh:
        return validate_config(json.load(fh))


class RunSummary:
    """Everything a run produced: per-field results, reports, failures.

    Attributes
    ----------
    fields : dict
        Per-field dict with ``a0``, ``compatibility``,
        ``corrector_sup_norms``, ``floor``, ``rates`` and ``checks``.
    reports : list of ErrorReport
        Successful sweep legs, in deterministic emission order.
    errors : list of dict
        Stage failures: ``{"stage": ..., "error": ...}``.
    passed : bool
        True iff every check passed and no stage failed.
    """

    def __init__(self, fields, reports, errors):
        self.fields = fields
        self.reports = reports
        self.errors = errors

    @property
    def passed(self):
        if self.errors:
            return False
        return all(
            check["passed"] for data in self.fields.values() for check in data["checks"]
        )

    def all_checks(self):
        """Yield (field_name, check_dict) in deterministic order."""
        for name, data in self.fields.items():
            for check in data["checks"]:
                yield name, check

    def to_dict(self):
        return {
            "schema_version": 1,
            "passed": self.passed,
            "fields": self.fields,
            "errors": self.errors,
        }


def _order_label(order):
    return ExpansionOrder(order).name.lower()


def _field_rates(reports_by_eps, floor_by_eps, orders, epsilons):
    """Fit per-(order, norm) rates, excluding points at the floor."""
    rates = {}
    for order in orders:
        per_norm = {}
        for norm in ERROR_COLUMNS:
            usable, at_floor, missing = [], [], []
            for eps in epsilons:
                report = reports_by_eps.get(eps, {}).get(order)
                floor = floor_by_eps.get(eps)
                if report is None or floor is None:
                    missing.append(eps)
                    continue
                value = report.norms[norm]
                if value <= FLOOR_FACTOR * floor.norms[norm]:
                    at_floor.append(eps)
                else:
                    usable.append((eps, value))
            entry = {
                "rate": None,
                "points_used": len(usable),
                "at_floor_epsilons": at_floor,
                "missing_epsilons": missing,
            }
            if len(usable) >= 3:
                entry["rate"] = fit_rate(usable)
            per_norm[norm] = entry
        rates[_order_label(order)] = per_norm
    return rates


def _field_checks(field, corrector_set, rates, orders, n_eps):
    """Assemble the pass/fail check list for one field."""
    checks = []

    a0 = corrector_set.a0
    asym = float(np.abs(a0 - a0.T).max())
    checks.append({
        "name": "a0_symmetric",
        "passed": asym <= 1e-10,
        "detail": f"max |a0 - a0^T| = {asym:.3e}",
    })
    eigs = np.linalg.eigvalsh(0.5 * (a0 + a0.T))
    within = field.lower_bound - 1e-8 <= eigs[0] and eigs[-1] <= field.upper_bound + 1e-8
    checks.append({
        "name": "a0_spectrum_within_bounds",
        "passed": bool(eigs[0] > 0.0 and within),
        "detail": f"eigenvalues [{eigs[0]:.6g}, {eigs[-1]:.6g}], "
                  f"bounds [{field.lower_bound:g}, {field.upper_bound:g}]",
    })

    means = [abs(n.mean()) for n in corrector_set.N]
    means += [abs(m.mean()) for m in corrector_set.M.values()]
    worst_mean = max(means)
    checks.append({
        "name": "corrector_means_zero",
        "passed": worst_mean <= 1e-10,
        "detail": f"max |mean| = {worst_mean:.3e}",
    })

    limit = COMPAT_LIMIT_SMOOTH if field.smooth else COMPAT_LIMIT_PIECEWISE
    worst_compat = max(corrector_set.compatibility.values())
    checks.append({
        "name": "second_rhs_compatibility",
        "passed": worst_compat <= limit,
        "detail": f"max residual = {worst_compat:.3e}, limit {limit:.1e}",
    })

    if n_eps >= 3:
        for (norm, order), (low, high) in RATE_BANDS.items():
            if order not in orders:
                continue
            name = f"rate_{norm}_{_order_label(order)}"
            entry = rates[_order_label(order)][norm]
            rate = entry["rate"]
            if rate is not None:
                checks.append({
                    "name": name,
                    "passed": bool(low <= rate <= high),
                    "detail": f"rate {rate:.3f}, window [{low}, {high}], "
                              f"{entry['points_used']} points",
                })
            elif entry["missing_epsilons"]:
                checks.append({
                    "name": name,
                    "passed": False,
                    "detail": "sweep legs failed for epsilons "
                              f"{entry['missing_epsilons']}",
                })
            else:
                # Every point sat at the discretization floor: the error is
                # below what the fine grid can measure, which cannot refute
                # the expected rate.
                checks.append({
                    "name": name,
                    "passed": True,
                    "detail": "all sweep points at discretization floor "
                              f"(epsilons {entry['at_floor_epsilons']})",
                })
    return checks


def run(config):
    """Execute a validated experiment config.

    Returns
    -------
    RunSummary

    Notes
    -----
    Each (field, epsilon) leg is isolated: an exception is recorded in
    ``summary.errors`` and the sweep continues.  If ``output_dir`` is
    set, artifacts are written even when legs fail (and on interrupt).
    """
    errors = []
    field_data = {}
    all_reports = []

    per_field = []
    for field in config.fields:
        stage = f"correctors:{field.name}"
        try:
            grid = build_grid(2, config.cell_grid)
            corrector_set = compute_correctors(grid, field)
        except Exception as exc:
            errors.append({"stage": stage, "error": f"{type(exc).__name__}: {exc}"})
            continue
        macro = manufactured_macro(corrector_set.a0)
        null_field = ConstantField(corrector_set.a0, name=field.name)
        null_correctors = compute_correctors(build_grid(2, 4), null_field)
        per_field.append((field, corrector_set, macro, null_field, null_correctors))

    def run_leg(field, corrector_set, macro, null_field, null_correctors, eps):
        fine = solve_fine(field, eps, macro.forcing, config.resolution_factor)
        null = solve_fine(null_field, eps, macro.forcing, config.resolution_factor)
        reports = {
            order: error_report(fine, order, corrector_set, macro, eps)
            for order in config.orders
        }
        floor = error_report(null, ExpansionOrder.ZEROTH, null_correctors, macro, eps)
        return reports, floor

    try:
        legs = [
            (field, corrector_set, macro, null_field, null_correctors, eps)
            for field, corrector_set, macro, null_field, null_correctors in per_field
            for eps in config.epsilons
        ]
        leg_results = {}
        if config.workers > 1 and len(legs) > 1:
            with concurrent.futures.ThreadPoolExecutor(config.workers) as pool:
                futures = {
                    pool.submit(run_leg, *leg): (leg[0].name, leg[5]) for leg in legs
                }
                for future, key in futures.items():
                    stage = f"fine:{key[0]}:eps={key[1]:g}"
                    try:
                        leg_results[key] = future.result()
                    except Exception as exc:
                        errors.append(
                            {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
                        )
        else:
            for leg in legs:
                key = (leg[0].name, leg[5])
                stage = f"fine:{key[0]}:eps={key[1]:g}"
                try:
                    leg_results[key] = run_leg(*leg)
                except Exception as exc:
                    errors.append(
                        {"stage": stage, "error": f"{type(exc).__name__}: {exc}"}
                    )

        for field, corrector_set, macro, null_field, null_correctors in per_field:
            reports_by_eps = {}
            floor_by_eps = {}
            for eps in config.epsilons:
                result = leg_results.get((field.name, eps))
                if result is None:
                    continue
                reports_by_eps[eps], floor_by_eps[eps] = result
                for order in config.orders:
                    all_reports.append(reports_by_eps[eps][order])
            rates = _field_rates(reports_by_eps, floor_by_eps, config.orders,
                                 config.epsilons)
            checks = _field_checks(field, corrector_set, rates, config.orders,
                                   len(config.epsilons))
            field_data[field.name] = {
                "a0": corrector_set.a0.tolist(),
                "compatibility": {
                    f"M_{k + 1}{l + 1}": res
                    for (k, l), res in sorted(corrector_set.compatibility.items())
                },
                "corrector_sup_norms": corrector_set.sup_norms(),
                "floor": {
                    repr(eps): floor.norms for eps, floor in sorted(
                        floor_by_eps.items(), reverse=True)
                },
                "rates": rates,
                "checks": checks,
                "_corrector_set": corrector_set,
            }
    finally:
        summary = RunSummary(field_data, all_reports, errors)
        if config.output_dir is not None:
            write_artifacts(summary, config.output_dir)
    return summary


def _format(value):
    """Shortest round-trip decimal form; identical across runs."""
    return repr(float(value))


def write_artifacts(summary, output_dir):
    """Write summary.json, errors.csv, a0.csv and corrector tables.

    Output is byte-deterministic for identical configs: fixed row and
    key ordering, shortest-round-trip float formatting.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    payload = summary.to_dict()
    payload["fields"] = {
        name: {k: v for k, v in data.items() if not k.startswith("_")}
        for name, data in payload["fields"].items()
    }
    with open(output_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(output_dir / "errors.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field", "order", "epsilon", *ERROR_COLUMNS])
        for report in summary.reports:
            writer.writerow(
                [report.field_name, int(report.order), _format(report.epsilon)]
                + [_format(report.norms[c]) for c in ERROR_COLUMNS]
            )

    with open(output_dir / "a0.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["field", "i", "j", "value"])
        for name, data in summary.fields.items():
            a0 = data["a0"]
            for i in range(2):
                for j in range(2):
                    writer.writerow([name, i + 1, j + 1, _format(a0[i][j])])

    correctors_dir = output_dir / "correctors"
    for name, data in summary.fields.items():
        corrector_set = data.get("_corrector_set")
        if corrector_set is None:
            continue
        field_dir = correctors_dir / name
        field_dir.mkdir(parents=True, exist_ok=True)
        named = [(f"N_{m + 1}", f) for m, f in enumerate(corrector_set.N)]
        named += [(f"M_{k + 1}{l + 1}", f) for (k, l), f in sorted(corrector_set.M.items())]
        for label, corrector in named:
            _write_corrector_csv(field_dir / f"{label}.csv", corrector)


def _write_corrector_csv(path, corrector):
    grid = corrector.grid
    n = grid.cells_per_side
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ix", "iy", "y1", "y2", "value"])
        values = corrector.values.reshape(n, n)
        for ix in range(n):
            for iy in range(n):
                writer.writerow(
                    [ix, iy, _format(ix * grid.h), _format(iy * grid.h),
                     _format(values[ix, iy])]
                )
