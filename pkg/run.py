#!/usr/bin/env python3
"""
DelayWalk CLI

Simulate and verify delayed non-local diffusion from scenario files.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from delaywalk import settings
from delaywalk.asymptotics import (
    compute_constants,
    identity_residual,
    limit_law,
    mean_path,
    recentring_path,
    slln_drift,
    speed_comparison,
    tilted_covariance,
)
from delaywalk.dde import characteristic_delta, characteristic_delta_prime, ratio_profile
from delaywalk.exceptions import ConfigurationError, DelayWalkError, NumericalError
from delaywalk.items import AtomicLaw, HyperbolicRateSpec, ProductMeasureSpec
from delaywalk.lattice import marginal_law, solve_lattice
from delaywalk.pipelines import ExportPipeline
from delaywalk.rates import HyperbolicDDE
from delaywalk.scenario import (
    Runtime,
    apply_overrides,
    build_lattice_initial,
    build_runtime,
    load_scenario,
)
from delaywalk.simulator import EnsembleResult, replay_trajectories, simulate_ensemble
from delaywalk.verify import (
    Recentring,
    check_lln,
    compare_lattice,
    compare_mean_path,
    compare_moments,
    profile_samples,
    selfsimilar_profile,
)

logger = logging.getLogger("delaywalk")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def say(message: str) -> None:
    """Progress line on the error stream."""
    print(message, file=sys.stderr)


class DelayWalkCLI:
    """CLI wrapper for DelayWalk commands."""

    COMMANDS = ['constants', 'dde-gamma', 'simulate', 'lattice', 'verify-clt', 'verify-lln', 'verify-lattice']

    def __init__(self):
        """Initialize the CLI."""
        self.output_dir = Path(settings.OUTPUT_DIR)
        self.args: Optional[argparse.Namespace] = None

    # ==================== SHARED STEPS ====================

    def load(self, horizon: Optional[float] = None) -> Runtime:
        """Load the scenario, apply overrides and build runtime objects."""
        args = self.args
        probes = [float(p) for p in args.probes.split(',')] if args.probes else None
        scenario = apply_overrides(
            load_scenario(args.scenario),
            seed=args.seed,
            n=args.n,
            horizon=args.horizon,
            probes=probes,
            workers=args.workers,
        )
        say(f"[*] Scenario: {scenario.name}")
        return build_runtime(scenario, horizon)

    def output_path(self, runtime: Runtime, suffix: str) -> Path:
        if self.args.out:
            return Path(self.args.out)
        return self.output_dir / f"{runtime.scenario.name}_{self.args.command}{suffix}"

    def sibling(self, primary: Path, tag: str, suffix: str) -> Path:
        return primary.with_name(f"{primary.stem}_{tag}{suffix}")

    def workers(self, runtime: Runtime) -> int:
        return self.args.workers or runtime.run.workers or settings.WORKERS

    def ensemble(self, runtime: Runtime) -> EnsembleResult:
        run = runtime.run
        workers = self.workers(runtime)
        say(f"[*] Simulating {run.n} trajectories to t={run.horizon:g} ({workers} worker(s), seed {run.seed})")
        result = simulate_ensemble(
            runtime.measure,
            runtime.policy,
            runtime.initial,
            run.horizon,
            run.probes,
            run.n,
            run.seed,
            workers=workers,
            sampler=runtime.sampler,
        )
        say(f"[+] Ensemble done: mean jump count {result.counts.mean():.6g}")
        return result

    def lattice_valued(self, runtime: Runtime) -> bool:
        """Whether every X(t) sits on the integer lattice."""
        atoms = runtime.measure.atoms()
        if atoms is None or not isinstance(runtime.scenario.initial.law, AtomicLaw):
            return False
        initial = np.array([a.z for a in runtime.scenario.initial.law.atoms])
        return bool(np.all(atoms[2] == np.rint(atoms[2])) and np.all(initial == np.rint(initial)))

    # ==================== COMMANDS ====================

    def cmd_constants(self) -> int:
        runtime = self.load(horizon=0.0)
        constants = compute_constants(runtime.measure, runtime.policy)
        payload: Dict[str, Any] = {
            "constants": constants.to_dict(),
            "checks": {
                "identity_residual": identity_residual(runtime.measure, runtime.policy, constants),
                "covariance_residual": float(np.max(np.abs(
                    tilted_covariance(runtime.measure, runtime.policy, constants) - constants.Sigma
                ))),
                "drift_residual": float(np.max(np.abs(slln_drift(constants) - constants.K))),
            },
        }
        scenario = runtime.scenario
        if isinstance(scenario.rate, HyperbolicRateSpec) and isinstance(scenario.measure, ProductMeasureSpec) \
                and scenario.measure.coupling is not None and scenario.dimension == 1:
            q = scenario.measure.coupling.q[0]
            payload["speed_comparison"] = speed_comparison(
                scenario.rate.a, scenario.rate.b, runtime.measure.theta_marginal(), (q, q / 2.0)
            )
        path = ExportPipeline(runtime.metadata()).write_json(self.output_path(runtime, ".json"), payload)
        say(f"[+] Γ={constants.Gamma:.12g}  K={constants.K.tolist()}  Σ={constants.Sigma.tolist()}")
        say(f"[+] Results saved to: {path}")
        return EXIT_OK

    def cmd_dde_gamma(self) -> int:
        runtime = self.load()
        policy = runtime.policy
        if not isinstance(policy, HyperbolicDDE):
            raise ConfigurationError("dde-gamma needs a hyperbolic_dde rate")
        t = runtime.run.horizon
        profile = ratio_profile(policy.solution, policy.gamma, t, -1.0)
        payload = {
            "gamma": policy.gamma,
            "delta_at_gamma": float(characteristic_delta(policy.gamma, policy.kernel)),
            "delta_prime_at_gamma": characteristic_delta_prime(policy.gamma, policy.kernel),
            "kernel_mass": policy.kernel.mass,
            "ratio_profile": {
                "t": t,
                "theta": -1.0,
                "ratio": profile.ratio,
                "limit": profile.limit,
                "error": profile.error,
            },
        }
        path = ExportPipeline(runtime.metadata()).write_json(self.output_path(runtime, ".json"), payload)
        say(f"[+] γ = {policy.gamma:.12g}")
        say(f"[+] Results saved to: {path}")
        return EXIT_OK

    def cmd_simulate(self) -> int:
        runtime = self.load()
        result = self.ensemble(runtime)
        exporter = ExportPipeline(runtime.metadata())
        primary = self.output_path(runtime, ".csv")
        exporter.write_ensemble_csv(primary, result)
        summary = {
            "n": result.n,
            "horizon": result.horizon,
            "probes": result.probes,
            "mean": result.values.mean(axis=0),
            "mean_jump_count": float(result.counts.mean()),
        }
        exporter.write_json(self.sibling(primary, "summary", ".json"), summary)
        if self.args.paths:
            run = runtime.run
            trajectories = replay_trajectories(
                runtime.measure, runtime.policy, runtime.initial, run.horizon, run.seed,
                min(self.args.paths, run.n), runtime.sampler,
            )
            exporter.write_paths_csv(self.sibling(primary, "paths", ".csv"), trajectories)
            say(f"[+] Wrote {len(trajectories)} trajectory event logs")
        say(f"[+] Results saved to: {primary}")
        return EXIT_OK

    def cmd_lattice(self) -> int:
        runtime = self.load()
        run = runtime.run
        say(f"[*] Solving the lattice system to t={run.horizon:g} with step {run.lattice_step:g}")
        evolution = solve_lattice(
            runtime.measure, runtime.policy, build_lattice_initial(runtime.scenario), run.horizon, run.lattice_step
        )
        exporter = ExportPipeline(runtime.metadata())
        primary = self.output_path(runtime, ".json")
        laws = []
        for t in run.lattice_times or run.probes:
            law = marginal_law(evolution, t)
            exporter.write_law_csv(self.sibling(primary, f"t{t:g}", ".csv"), law.support())
            laws.append({
                "t": t,
                "mean": law.mean(),
                "covariance": law.covariance(),
                "renormalization": law.renormalization,
            })
        exporter.write_json(primary, {
            "step": evolution.step,
            "max_mass_error": evolution.max_mass_error,
            "min_value": evolution.min_value,
            "laws": laws,
        })
        say(f"[+] Max mass error {evolution.max_mass_error:.3e}")
        say(f"[+] Results saved to: {primary}")
        return EXIT_OK

    def cmd_verify_clt(self) -> int:
        runtime = self.load()
        constants = compute_constants(runtime.measure, runtime.policy)
        law = limit_law(constants)
        recentring = Recentring(runtime.run.recentring)
        path = None
        if recentring is Recentring.PATH:
            path = recentring_path(runtime.measure, runtime.policy, runtime.run.horizon, constants=constants)
        result = self.ensemble(runtime)
        spacing = 1.0 if self.lattice_valued(runtime) else None
        report = selfsimilar_profile(
            result, constants, law, recentring, path, runtime.scenario.tolerances, spacing
        )
        exporter = ExportPipeline(runtime.metadata())
        primary = self.output_path(runtime, ".json")
        exporter.write_json(primary, {
            "constants": constants.to_dict(),
            "sqrt_Sigma": np.sqrt(np.diag(constants.Sigma)),
            "profile": report.model_dump(),
        })
        if self.args.dump_samples:
            for t in report.probes:
                samples = profile_samples(result, t, constants, recentring, path)
                exporter.write_samples_csv(self.sibling(primary, f"samples_t{t:g}", ".csv"), t, samples)
        for t, gof in zip(report.probes, report.reports):
            say(f"    t={t:g}: std(Z)={gof.std}  KS={gof.ks_statistics}  passed={gof.passed}")
        return self.finish(report.passed, primary)

    def cmd_verify_lln(self) -> int:
        runtime = self.load()
        constants = compute_constants(runtime.measure, runtime.policy)
        result = self.ensemble(runtime)
        tolerances = runtime.scenario.tolerances
        report = check_lln(result, constants.K, tolerances, constants.Sigma)
        payload: Dict[str, Any] = {"lln": report.model_dump()}
        passed = report.passed
        if result.n > 1 and np.any(result.probes > 0):
            path = mean_path(runtime.measure, runtime.policy, runtime.initial.law.mean(), runtime.run.horizon)
            finite_time = compare_mean_path(result, path, tolerances)
            payload["mean_path"] = finite_time.model_dump()
            passed = passed and finite_time.passed
            say(f"    worst |mean(X/t) - E(X(t)/t)| = {max(p.error for p in finite_time.points):.6g}")
        primary = self.output_path(runtime, ".json")
        ExportPipeline(runtime.metadata()).write_json(primary, payload)
        say(f"    final |mean(X/t) - K| = {report.probes[-1].error:.6g} (half-width {report.probes[-1].half_width:.6g})")
        return self.finish(passed, primary)

    def cmd_verify_lattice(self) -> int:
        runtime = self.load()
        run = runtime.run
        evolution = solve_lattice(
            runtime.measure, runtime.policy, build_lattice_initial(runtime.scenario), run.horizon, run.lattice_step
        )
        result = self.ensemble(runtime)
        comparisons: List[Dict[str, Any]] = []
        passed = True
        for t in run.lattice_times or run.probes:
            law = marginal_law(evolution, t)
            samples = result.at(t)
            tv = compare_lattice(samples, law)
            moments = compare_moments(samples, law, runtime.scenario.tolerances.ci_sigmas)
            passed = passed and tv.passed and moments.passed
            comparisons.append({"t": t, "total_variation": tv.model_dump(), "moments": moments.model_dump()})
            say(f"    t={t:g}: TV={tv.total_variation:.6g} (bound {tv.noise_bound:.6g})")
        primary = self.output_path(runtime, ".json")
        ExportPipeline(runtime.metadata()).write_json(primary, {
            "max_mass_error": evolution.max_mass_error,
            "comparisons": comparisons,
        })
        return self.finish(passed, primary)

    def finish(self, passed: bool, path: Path) -> int:
        say(f"[+] Results saved to: {path}")
        if passed:
            say("[+] Verification passed")
            return EXIT_OK
        say("[!] Verification failed")
        return EXIT_FAILED

    # ==================== ENTRY POINT ====================

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            description='DelayWalk - simulate and verify delayed non-local diffusion',
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog='''
Examples:
  Asymptotic constants:
    python run.py constants --scenario scenarios/delayed_poisson.json

  Dominant root of the hyperbolic delay equation:
    python run.py dde-gamma --scenario scenarios/hyperbolic_transport.json

  CLT check with 8 workers:
    python run.py verify-clt --scenario scenarios/delayed_poisson.json --workers 8

  Ensemble with 40 sample paths for plotting:
    python run.py simulate --scenario scenarios/hyperbolic_uniform.json --paths

  Lattice oracle against Monte Carlo:
    python run.py verify-lattice --scenario scenarios/delayed_poisson.json --n 100000
            '''
        )
        parser.add_argument('command', choices=self.COMMANDS, help='Command to run')
        parser.add_argument('--scenario', required=True, help='Scenario JSON file')
        parser.add_argument('--out', default=None, help='Primary output file')
        parser.add_argument('--seed', type=int, default=None, help='Master seed (unsigned 64-bit)')
        parser.add_argument('--n', type=int, default=None, help='Ensemble size')
        parser.add_argument('--horizon', type=float, default=None, help='Simulation horizon')
        parser.add_argument('--probes', default=None, help='Comma-separated probe times')
        parser.add_argument('--workers', type=int, default=None, help='Worker processes')
        parser.add_argument('--log-level', default=settings.LOG_LEVEL, help='Logging level (default: WARNING)')
        parser.add_argument('--dump-samples', action='store_true', help='Write rescaled samples as CSV')
        parser.add_argument(
            '--paths', type=int, nargs='?', const=40, default=None,
            help='With simulate: write event logs of the first N trajectories (default N: 40)',
        )
        return parser

    def main(self, argv: Optional[List[str]] = None) -> int:
        """Main CLI entry point; returns the exit code."""
        parser = self.build_parser()
        self.args = parser.parse_args(argv)
        logging.basicConfig(
            level=getattr(logging, str(self.args.log_level).upper(), logging.WARNING),
            format='%(asctime)s [%(name)s] %(levelname)s: %(message)s',
            stream=sys.stderr,
        )
        handler = getattr(self, 'cmd_' + self.args.command.replace('-', '_'))
        try:
            return handler()
        except ConfigurationError as e:
            say(f"[!] Configuration error: {e}")
            return EXIT_CONFIG
        except NumericalError as e:
            say(f"[!] Numerical error: {e}")
            return EXIT_NUMERICAL
        except DelayWalkError as e:
            say(f"[!] Error: {e}")
            return EXIT_NUMERICAL
        except (ArithmeticError, ValueError) as e:
            # scipy root finders and float arithmetic outside the package hierarchy
            logger.exception("Unhandled numerical failure")
            say(f"[!] Numerical error: {e}")
            return EXIT_NUMERICAL


if __name__ == '__main__':
    cli = DelayWalkCLI()
    sys.exit(cli.main())
