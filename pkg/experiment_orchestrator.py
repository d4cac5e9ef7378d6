"""
Experiment orchestrator coordinating model evaluation, oracle validation,
single simulations, handover sweeps and fairness runs.
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from freezetfrc import create_app
from freezetfrc.models import HandoverResult, ModelInputs, Scenario, TraceKind, Variant
from freezetfrc.services import analytic_model
from freezetfrc.utils.csvio import write_versioned_csv
from scenarios.builder import RENO_FLOW, TFRC_FLOW, build_fairness_scenario, build_handover_scenario
from scenarios.metrics import calibrate_reference, fairness_ratio, measure_losses, measure_wasted
from scenarios.profiles import MATRIX_ORDER, get_profile, technology_pairs
from simnet.runner import run_scenario

logger = logging.getLogger(__name__)

ORACLE_CAPACITIES = (10e6, 54e6, 100e6)
ORACLE_DELAYS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)
ORACLE_DISCONNECTION = 60.0

RESULT_COLUMNS = ['variant', 'from', 'to', 'seed', 'n_lost', 'n_wasted', 'fairness']


# ---------------------------------------------------------------------------
# Sweep cells (module level so worker processes can pickle them)
# ---------------------------------------------------------------------------

def run_handover_cell(
    from_tech: str,
    to_tech: str,
    variant: str,
    seed: int,
    x_ref: float,
    settings: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """One seeded handover run reduced to losses and wasted capacity."""
    settings = settings or create_app()
    scenario = build_handover_scenario(from_tech, to_tech, variant, seed, settings)
    trace = run_scenario(scenario, settings)
    result = HandoverResult(
        variant=Variant(variant),
        from_tech=from_tech,
        to_tech=to_tech,
        seed=seed,
        n_lost=measure_losses(trace, TFRC_FLOW),
        n_wasted=measure_wasted(
            trace, x_ref, TFRC_FLOW,
            s=scenario.segment_size,
            threshold=settings['SETTLEMENT_THRESHOLD'],
            cap=settings['SETTLEMENT_CAP'],
        ),
    )
    return result.to_dict()


def run_fairness_cell(
    from_tech: str,
    to_tech: str,
    variant: str,
    seed: int,
    x_ref: Optional[float] = None,
    settings: Optional[Dict[str, Any]] = None
) -> Dict[str, Any]:
    """One seeded handover run with a competing Reno flow, reduced to the throughput share."""
    settings = settings or create_app()
    scenario = build_fairness_scenario(from_tech, to_tech, variant, seed, settings)
    trace = run_scenario(scenario, settings)
    result = HandoverResult(
        variant=Variant(variant),
        from_tech=from_tech,
        to_tech=to_tech,
        seed=seed,
        n_lost=measure_losses(trace, TFRC_FLOW),
        n_wasted=math.nan,
        fairness_ratio=fairness_ratio(
            trace, TFRC_FLOW, RENO_FLOW,
            window=settings['FAIRNESS_WINDOW'],
            settle=settings['FAIRNESS_SETTLE'],
        ),
    )
    return result.to_dict()


def _variants(variant: str) -> List[str]:
    if variant == 'both':
        return [Variant.STANDARD.value, Variant.FREEZE.value]
    return [Variant(variant).value]


def _matrix_sort(df: pd.DataFrame) -> pd.DataFrame:
    order = {name: i for i, name in enumerate(MATRIX_ORDER)}
    keys = ['variant', 'from', 'to'] + (['seed'] if 'seed' in df.columns else [])
    return df.sort_values(keys, key=lambda col: col.map(order) if col.name in ('from', 'to') else col,
                          kind='mergesort').reset_index(drop=True)


class ExperimentOrchestrator:
    """Orchestrates model, oracle and simulation experiments."""

    # -- analytic model ----------------------------------------------------

    @staticmethod
    def run_model(inp: ModelInputs, check_oracle: bool = True) -> Dict[str, Any]:
        """
        Evaluate the analytic model for one input tuple.

        Args:
            inp: Model parameters
            check_oracle: Cross-check the backoff timeline against the step oracle

        Returns:
            Dictionary with the inputs and every model output
        """
        try:
            outputs = analytic_model.full_model(inp, check_oracle=check_oracle)
            row = {
                'x_d': inp.x_d, 'r_old': inp.r_old, 'r_new': inp.r_new, 't_d': inp.t_d,
                'p_r': inp.p_r, 'x_max': inp.x_max, 's': inp.s,
            }
            row.update(outputs.to_dict())
            logger.info(f"Model evaluated: n_lost={outputs.n_lost}, wasted={outputs.table_wasted}")
            return row
        except Exception as e:
            logger.error(f"Model evaluation failed: {str(e)}")
            raise

    @staticmethod
    def run_model_matrix(
        settings: Optional[Dict[str, Any]] = None,
        check_oracle: bool = True,
        executor: str = 'local'
    ) -> pd.DataFrame:
        """
        Model outputs for every (from, to) technology pair.

        With ``executor='celery'`` the matrix is evaluated by a worker and
        comes back as records.
        """
        settings = settings or create_app()
        if executor == 'celery':
            from tasks import model_matrix_task
            logger.info("Dispatching the model matrix to the task queue")
            return pd.DataFrame(model_matrix_task.delay(check_oracle).get())
        logger.info("Starting model evaluation over the handover matrix")
        try:
            rows = []
            for src, dst in technology_pairs():
                inp = analytic_model.handover_inputs(
                    get_profile(src), get_profile(dst),
                    s=settings['SEGMENT_SIZE'], q=settings['RTT_EWMA_Q'], t_mbi=settings['T_MBI'],
                )
                row = {'from': src, 'to': dst}
                row.update(ExperimentOrchestrator.run_model(inp, check_oracle))
                rows.append(row)
            df = pd.DataFrame(rows)
            logger.info(f"Model matrix completed: {len(df)} cells")
            return df
        except Exception as e:
            logger.error(f"Model matrix failed: {str(e)}")
            raise

    @staticmethod
    def matrix_table(df: pd.DataFrame, value: str) -> pd.DataFrame:
        """Pivot a per-cell frame into from-rows by to-columns in matrix order."""
        table = df.pivot_table(index='from', columns='to', values=value, aggfunc='mean')
        return table.reindex(index=MATRIX_ORDER, columns=MATRIX_ORDER)

    # -- oracle --------------------------------------------------------------

    @staticmethod
    def oracle_cases(fuzz: int = 1000, seed: int = 0, s: int = 500, t_mbi: float = 64.0) -> List[ModelInputs]:
        """Fixed validation grid followed by ``fuzz`` random tuples."""
        cases = [
            ModelInputs(x_d=capacity / 8.0, r_old=2 * delay, r_new=2 * delay, s=s,
                        t_d=ORACLE_DISCONNECTION, t_mbi=t_mbi)
            for capacity in ORACLE_CAPACITIES
            for delay in ORACLE_DELAYS
        ]
        rng = np.random.default_rng(seed)
        for _ in range(fuzz):
            size = int(rng.integers(40, 1501))
            floor_rate = size / t_mbi
            cases.append(ModelInputs(
                x_d=float(floor_rate * 10 ** rng.uniform(0.0, 6.0)),
                r_old=float(10 ** rng.uniform(-3.0, 0.5)),
                r_new=float(10 ** rng.uniform(-3.0, 0.5)),
                s=size,
                t_d=float(rng.uniform(0.0, 120.0)),
                t_mbi=t_mbi,
            ))
        return cases

    @staticmethod
    def run_oracle(fuzz: int = 1000, seed: int = 0, closed_form: Optional[Callable] = None) -> Tuple[pd.DataFrame, Dict[str, Any]]:
        """
        Replay every case through the closed forms and the step oracle.

        Returns:
            (per-NFI frame, verdict dict with ``passed``, ``cases``,
            ``mismatches`` and the first failing case/NFI index)
        """
        closed_form = closed_form or analytic_model.closed_form_timeline
        logger.info(f"Starting oracle validation with {fuzz} random cases")
        try:
            rows = []
            mismatches = []
            cases = ExperimentOrchestrator.oracle_cases(fuzz, seed)
            for case_id, inp in enumerate(cases):
                if inp.t_d == 0:
                    continue
                expected = closed_form(inp)
                actual = analytic_model.simulate_nfi_timeline(inp)
                index = analytic_model.compare_timelines(expected, actual)
                if index is not None:
                    mismatches.append((case_id, index))
                for a, b in zip(expected.steps, actual.steps):
                    rows.append({
                        'case': case_id, 'nfi': a.index,
                        'x_closed': a.rate, 'x_oracle': b.rate,
                        't_rto_closed': a.duration, 't_rto_oracle': b.duration,
                        'lost_closed': a.cumulative_packets, 'lost_oracle': b.cumulative_packets,
                        'match': index is None or a.index < index,
                    })
            verdict = {
                'passed': not mismatches,
                'cases': len(cases),
                'mismatches': len(mismatches),
                'first_case': mismatches[0][0] if mismatches else None,
                'first_nfi': mismatches[0][1] if mismatches else None,
            }
            logger.info(f"Oracle validation completed: {verdict}")
            return pd.DataFrame(rows), verdict
        except Exception as e:
            logger.error(f"Oracle validation failed: {str(e)}")
            raise

    # -- simulation ----------------------------------------------------------

    @staticmethod
    def run_simulation(
        scenario: Scenario,
        settings: Optional[Dict[str, Any]] = None,
        output_dir: Optional[str] = None,
        prefix: str = 'sim'
    ) -> Dict[str, Any]:
        """
        Run one scenario and export its trace, rate plot data and binary log.

        Returns:
            Dictionary with per-flow counters, handover metrics when the
            scenario has a disconnection, and the written file paths
        """
        settings = settings or create_app()
        output_dir = output_dir or settings['OUTPUT_DIR']
        logger.info(f"Starting simulation (seed={scenario.seed}, {len(scenario.events)} events)")
        try:
            trace = run_scenario(scenario, settings)
            result: Dict[str, Any] = {
                'seed': scenario.seed,
                'end_time': trace.end_time,
                'flows': {flow: dict(trace.counters[flow]) for flow in trace.flows()},
                'files': [],
            }
            result.update(trace.meta)
            if trace.first(TraceKind.LINK_DOWN) is not None:
                result['n_lost'] = {flow: measure_losses(trace, flow) for flow in trace.flows()}
            os.makedirs(output_dir, exist_ok=True)
            result['files'].append(trace.write_csv(os.path.join(output_dir, f"{prefix}_trace.csv")))
            result['files'].append(write_versioned_csv(
                trace.rate_frame(), os.path.join(output_dir, f"{prefix}_rates.csv"), schema='rates'))
            result['files'].append(trace.write_binary(os.path.join(output_dir, f"{prefix}_trace.bin")))
            logger.info(f"Simulation completed at t={trace.end_time:.2f} s")
            return result
        except Exception as e:
            logger.error(f"Simulation failed: {str(e)}")
            raise

    @staticmethod
    def calibrate_references(techs: Iterable[str], settings: Optional[Dict[str, Any]] = None) -> Dict[str, float]:
        """Stationary X_recv per technology, measured once with a lone flow."""
        settings = settings or create_app()
        return {tech: calibrate_reference(tech, 0, settings).x_recv for tech in sorted(set(techs))}

    @staticmethod
    def _execute(
        cell: Callable,
        jobs: List[Tuple[str, str, str, int]],
        references: Dict[str, float],
        settings: Dict[str, Any],
        workers: int,
        executor: str
    ) -> Iterator[Dict[str, Any]]:
        """Results of ``jobs`` in submission order; everything is dispatched up front."""
        if executor == 'celery':
            from tasks import fairness_cell_task, handover_cell_task
            task = fairness_cell_task if cell is run_fairness_cell else handover_cell_task
            pending = [task.delay(src, dst, variant, seed, references.get(dst)) for src, dst, variant, seed in jobs]
            for i, async_result in enumerate(pending):
                try:
                    yield async_result.get()
                except Exception:
                    for rest in pending[i + 1:]:
                        rest.revoke()
                    raise
        elif workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(cell, src, dst, variant, seed, references.get(dst), settings)
                    for src, dst, variant, seed in jobs
                ]
                try:
                    for future in futures:
                        yield future.result()
                finally:
                    for future in futures:
                        future.cancel()
        else:
            for src, dst, variant, seed in jobs:
                yield cell(src, dst, variant, seed, references.get(dst), settings)

    @staticmethod
    def _run_cells(
        cell: Callable,
        pairs: Sequence[Tuple[str, str]],
        variant: str,
        seeds: Sequence[int],
        settings: Optional[Dict[str, Any]],
        jobs: int,
        executor: str,
        output_dir: Optional[str],
        schema: str,
        calibrate: bool
    ) -> Tuple[pd.DataFrame, pd.DataFrame]:
        settings = settings or create_app()
        output_dir = output_dir or settings['OUTPUT_DIR']
        work = [(src, dst, v, seed) for v in _variants(variant) for src, dst in pairs for seed in seeds]
        logger.info(f"Starting {schema} over {len(work)} runs with {jobs} worker(s), executor={executor}")
        references = (
            ExperimentOrchestrator.calibrate_references([dst for _, dst in pairs], settings) if calibrate else {}
        )

        rows: List[Dict[str, Any]] = []
        try:
            # Rows arrive in submission order; a failure keeps every run before it.
            for row in ExperimentOrchestrator._execute(cell, work, references, settings, jobs, executor):
                rows.append(row)
        except Exception as e:
            logger.error(f"{schema} aborted after {len(rows)} runs: {str(e)}")
            if rows:
                partial = _matrix_sort(pd.DataFrame(rows, columns=RESULT_COLUMNS))
                write_versioned_csv(partial, os.path.join(output_dir, f"{schema}_partial.csv"), schema=schema)
            raise

        per_seed = _matrix_sort(pd.DataFrame(rows, columns=RESULT_COLUMNS))
        metrics = ['n_lost', 'n_wasted', 'fairness']
        per_seed[metrics] = per_seed[metrics].apply(pd.to_numeric)
        aggregate = _matrix_sort(
            per_seed.groupby(['variant', 'from', 'to'], sort=False)[metrics]
            .mean().reset_index()
        )
        write_versioned_csv(per_seed, os.path.join(output_dir, f"{schema}_runs.csv"), schema=schema)
        write_versioned_csv(aggregate, os.path.join(output_dir, f"{schema}_aggregate.csv"), schema=f"{schema}_aggregate")
        logger.info(f"{schema} completed: {len(per_seed)} runs in {len(aggregate)} cells")
        return per_seed, aggregate

    @staticmethod
    def run_sweep(
        pairs: Optional[Sequence[Tuple[str, str]]] = None,
        variant: str = 'both',
        seeds: Optional[Sequence[int]] = None,
        settings: Optional[Dict[str, Any]] = None,
        jobs: int = 1,
        executor: str = 'local',
        output_dir: Optional[str] = None
    ) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        Handover matrix sweep: losses and wasted capacity per (variant, from, to, seed).

        Returns:
            (per-seed frame, aggregate frame) ordered by cell then seed
        """
        settings = settings or create_app()
        seeds = list(range(settings['RUNS_PER_CELL'])) if seeds is None else list(seeds)
        return ExperimentOrchestrator._run_cells(
            run_handover_cell, pairs or technology_pairs(), variant, seeds, settings,
            jobs, executor, output_dir, 'sweep', calibrate=True,
        )

    @staticmethod
    def run_fairness(
        pairs: Optional[Sequence[Tuple[str, str]]] = None,
        variant: str = 'freeze',
        seeds: Optional[Sequence[int]] = None,
        settings: Optional[Dict[str, Any]] = None,
        jobs: int = 1,
        executor: str = 'local',
        output_dir: Optional[str] = None
    ) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """TFRC/TCP throughput ratio per (variant, from, to, seed)."""
        settings = settings or create_app()
        seeds = list(range(settings['RUNS_PER_CELL'])) if seeds is None else list(seeds)
        return ExperimentOrchestrator._run_cells(
            run_fairness_cell, pairs or technology_pairs(), variant, seeds, settings,
            jobs, executor, output_dir, 'fairness', calibrate=False,
        )
