use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::workload::SubstringWorkload;
use super::{BenchConfig, BenchError, BenchMode, BenchRow};
use crate::collector::{AgcPhase, Hooks};
use crate::handle::AtomHandle;
use crate::roots::{ArenaId, ThreadContext};
use crate::table::{AtomTable, TableConfig};

/// CPU time consumed by the whole process so far.
pub fn process_cpu_time() -> Duration {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: valid clock id and a live out-pointer.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return Duration::ZERO;
    }
    Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32)
}

/// Result of the post-run full-table walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditSummary {
    pub valid_atoms: usize,
    pub unique_names: usize,
    pub duplicates: usize,
    pub misplaced: usize,
    /// Exact number of unique atoms the run must leave, when known.
    pub expected: Option<usize>,
    /// Upper bound on unique atoms.
    pub bound: usize,
}

impl AuditSummary {
    fn of(table: &AtomTable, expected: Option<usize>, bound: usize) -> Self {
        let report = table.audit();
        Self {
            valid_atoms: report.valid_atoms,
            unique_names: report.names.len(),
            duplicates: report.duplicates().count(),
            misplaced: report.misplaced,
            expected,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.duplicates == 0
            && self.misplaced == 0
            && self.valid_atoms == self.unique_names
            && self.unique_names <= self.bound
            && self.expected.is_none_or(|e| e == self.unique_names)
    }
}

impl fmt::Display for AuditSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "audit: unique_atoms={}", self.unique_names)?;
        match self.expected {
            Some(e) => write!(f, " expected={e}")?,
            None => write!(f, " bound={}", self.bound)?,
        }
        write!(
            f,
            " valid={} duplicates={} misplaced={} {}",
            self.valid_atoms,
            self.duplicates,
            self.misplaced,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

/// Intern latencies with the collector idle and with its destroy phase
/// stalled.
#[derive(Clone, Debug, PartialEq)]
pub struct StallProbe {
    pub idle_median: Duration,
    pub stalled_median: Duration,
    pub stalled_max: Duration,
    pub find_max: Duration,
    pub samples: usize,
}

impl StallProbe {
    pub fn within_bound(&self) -> bool {
        self.stalled_median <= self.idle_median * 10
    }
}

impl fmt::Display for StallProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stall: idle_median={:?} stalled_median={:?} stalled_max={:?} find_max={:?} samples={} {}",
            self.idle_median,
            self.stalled_median,
            self.stalled_max,
            self.find_max,
            self.samples,
            if self.within_bound() { "ok" } else { "FAILED" }
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub audits: Vec<AuditSummary>,
    pub stalls: Vec<StallProbe>,
}

impl BenchReport {
    /// Fails on the first audit or latency bound that did not hold.
    pub fn verify(&self) -> Result<(), BenchError> {
        if let Some(a) = self.audits.iter().find(|a| !a.passed()) {
            return Err(BenchError::Invariant(a.to_string()));
        }
        if let Some(s) = self.stalls.iter().find(|s| !s.within_bound()) {
            return Err(BenchError::Invariant(s.to_string()));
        }
        Ok(())
    }
}

/// Runs every configured thread count `reps` times and collects the rows.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let workload = SubstringWorkload::new(cfg.alphabet, cfg.seed)?;
    let mut report = BenchReport::default();
    for &threads in &cfg.threads {
        match cfg.mode {
            BenchMode::Preallocated => preallocated(cfg, &workload, threads, &mut report)?,
            BenchMode::AgcActive => agc_active(cfg, &workload, threads, &mut report)?,
            BenchMode::Churn => churn(cfg, &workload, threads, &mut report)?,
            BenchMode::StallProbe => stall_probe(cfg, &workload, threads, &mut report)?,
        }
    }
    Ok(report)
}

/// Times `body` and turns the table's statistics delta into a row.
fn measure(
    table: &AtomTable,
    report: &BenchReport,
    threads: usize,
    body: impl FnOnce() -> Result<(), BenchError>,
) -> Result<BenchRow, BenchError> {
    let before = table.agc_stats();
    let cpu = process_cpu_time();
    let started = Instant::now();
    body()?;
    let wall = started.elapsed();
    let cpu = process_cpu_time().saturating_sub(cpu);
    let after = table.agc_stats();
    Ok(BenchRow {
        row: report.rows.len() + 1,
        threads,
        process_s: cpu.as_secs_f64(),
        wall_s: wall.as_secs_f64(),
        agc_invocations: after.invocations - before.invocations,
        reclaimed_bytes: after.bytes_reclaimed - before.bytes_reclaimed,
        agc_s: (after.total_time() - before.total_time()).as_secs_f64(),
    })
}

/// Runs `work` on `threads` scoped threads, each with its own context.
fn spawn_workers<F>(table: &Arc<AtomTable>, threads: usize, work: F) -> Result<(), BenchError>
where
    F: Fn(usize, &ThreadContext) -> Result<(), BenchError> + Sync,
{
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let work = &work;
                s.spawn(move || {
                    let ctx = table.register_thread();
                    work(t, &ctx)
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| {
            h.join()
                .map_err(|_| BenchError::Invariant("worker thread panicked".into()))?
        })
    })
}

/// Interns and immediately drops every workload string.
fn intern_all(ctx: &ThreadContext, workload: &SubstringWorkload) -> Result<(), BenchError> {
    for s in workload.iter() {
        let h = ctx.intern(s)?;
        ctx.unregister_atom(h)?;
    }
    Ok(())
}

fn preallocated(
    cfg: &BenchConfig,
    workload: &SubstringWorkload,
    threads: usize,
    report: &mut BenchReport,
) -> Result<(), BenchError> {
    let table = AtomTable::new(TableConfig::manual());
    let owner = table.register_thread();
    for s in workload.iter() {
        owner.intern(s)?;
    }
    for _ in 0..cfg.reps {
        let row = measure(&table, report, threads, || {
            spawn_workers(&table, threads, |_, ctx| intern_all(ctx, workload))
        })?;
        report.rows.push(row);
    }
    report
        .audits
        .push(AuditSummary::of(&table, Some(workload.len()), workload.len()));
    Ok(())
}

fn agc_active(
    cfg: &BenchConfig,
    workload: &SubstringWorkload,
    threads: usize,
    report: &mut BenchReport,
) -> Result<(), BenchError> {
    for _ in 0..cfg.reps {
        let table = AtomTable::new(TableConfig::default());
        let row = measure(&table, report, threads, || {
            spawn_workers(&table, threads, |_, ctx| intern_all(ctx, workload))
        })?;
        report.rows.push(row);
        report.audits.push(AuditSummary::of(&table, None, workload.len()));
    }
    Ok(())
}

/// Handles a churn worker keeps in its arena at most.
const CHURN_HELD: usize = 64;

fn churn(
    cfg: &BenchConfig,
    workload: &SubstringWorkload,
    threads: usize,
    report: &mut BenchReport,
) -> Result<(), BenchError> {
    for rep in 0..cfg.reps {
        let table = AtomTable::new(TableConfig::manual());
        let done = AtomicBool::new(false);
        let ops = workload.len().max(1000);
        let row = measure(&table, report, threads, || {
            thread::scope(|s| {
                let collector = s.spawn(|| {
                    while !done.load(Ordering::SeqCst) {
                        table.run_agc();
                        thread::yield_now();
                    }
                });
                let result = spawn_workers(&table, threads, |t, ctx| {
                    let seed = cfg.seed ^ ((rep as u64) << 32) ^ t as u64;
                    churn_worker(ctx, workload, ops, seed)
                });
                done.store(true, Ordering::SeqCst);
                collector
                    .join()
                    .map_err(|_| BenchError::Invariant("collector thread panicked".into()))?;
                result
            })
        })?;
        report.rows.push(row);
        report.audits.push(AuditSummary::of(&table, None, workload.len()));
    }
    Ok(())
}

fn churn_worker(
    ctx: &ThreadContext,
    workload: &SubstringWorkload,
    ops: usize,
    seed: u64,
) -> Result<(), BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held: Vec<(AtomHandle, usize)> = Vec::new();
    let check = |h: AtomHandle, k: usize| -> Result<(), BenchError> {
        let name = ctx.table().name_of(h)?;
        if Some(name.as_slice()) != workload.get(k) {
            return Err(BenchError::Invariant(format!(
                "arena-held {h:?} changed identity"
            )));
        }
        Ok(())
    };
    for _ in 0..ops {
        let k = rng.gen_range(0..workload.len());
        let h = ctx.intern(workload.get(k).expect("index in range"))?;
        if rng.gen_bool(0.1) {
            ctx.arena_push(ArenaId::DEFAULT, h.raw())?;
            held.push((h, k));
        }
        ctx.unregister_atom(h)?;
        if held.len() > CHURN_HELD {
            let (h, k) = held.pop().expect("nonempty");
            check(h, k)?;
            ctx.arena_pop(ArenaId::DEFAULT)?;
        }
    }
    for &(h, k) in &held {
        check(h, k)?;
    }
    Ok(())
}

fn median(v: &mut [Duration]) -> Duration {
    v.sort_unstable();
    v.get(v.len() / 2).copied().unwrap_or_default()
}

fn stall_probe(
    cfg: &BenchConfig,
    workload: &SubstringWorkload,
    threads: usize,
    report: &mut BenchReport,
) -> Result<(), BenchError> {
    let samples = (workload.len() / 3).clamp(1, 2000);
    for _ in 0..cfg.reps {
        let stalled = Arc::new(AtomicBool::new(false));
        let hook_flag = Arc::clone(&stalled);
        let stall = cfg.stall;
        let table = AtomTable::new(TableConfig {
            hooks: Hooks {
                on_phase: Some(Arc::new(move |phase| {
                    if phase == AgcPhase::Destroy {
                        hook_flag.store(true, Ordering::SeqCst);
                        thread::sleep(stall);
                        hook_flag.store(false, Ordering::SeqCst);
                    }
                })),
                ..Hooks::default()
            },
            ..TableConfig::manual()
        });

        // strings [0, samples) are kept, the next two thirds are fresh
        let owner = table.register_thread();
        let mut kept = Vec::with_capacity(samples);
        for k in 0..samples {
            kept.push(owner.intern(workload.get(k).expect("in range"))?);
        }
        let fresh = |k: usize| workload.get((samples + k) % workload.len()).expect("in range");

        let mut idle = Vec::with_capacity(samples);
        for k in 0..samples {
            let t = Instant::now();
            let h = owner.intern(fresh(k))?;
            idle.push(t.elapsed());
            owner.unregister_atom(h)?;
        }

        let mut during = Vec::new();
        let mut find_max = Duration::ZERO;
        let row = measure(&table, report, threads, || {
            thread::scope(|s| {
                let collector = s.spawn(|| table.run_agc());
                while !stalled.load(Ordering::SeqCst) {
                    if collector.is_finished() {
                        return Err(BenchError::Invariant("destroy phase never stalled".into()));
                    }
                    thread::yield_now();
                }
                let per_thread: Vec<(Vec<Duration>, Duration)> = thread::scope(|inner| {
                    let probes: Vec<_> = (0..threads)
                        .map(|t| {
                            let table = &table;
                            let fresh = &fresh;
                            inner.spawn(move || -> Result<_, BenchError> {
                                let ctx = table.register_thread();
                                let mut lat = Vec::with_capacity(samples);
                                let mut find_max = Duration::ZERO;
                                for k in 0..samples {
                                    let t0 = Instant::now();
                                    let h = ctx.intern(fresh(samples * (t + 1) + k))?;
                                    lat.push(t0.elapsed());
                                    ctx.unregister_atom(h)?;
                                    let t0 = Instant::now();
                                    let found = ctx.find_existing(workload.get(k).expect("in range"));
                                    find_max = find_max.max(t0.elapsed());
                                    let found = found.ok_or_else(|| {
                                        BenchError::Invariant("kept atom not found".into())
                                    })?;
                                    ctx.unregister_atom(found)?;
                                }
                                Ok((lat, find_max))
                            })
                        })
                        .collect();
                    probes
                        .into_iter()
                        .map(|p| {
                            p.join()
                                .map_err(|_| BenchError::Invariant("probe thread panicked".into()))?
                        })
                        .collect::<Result<_, _>>()
                })?;
                let still_stalled = stalled.load(Ordering::SeqCst);
                collector
                    .join()
                    .map_err(|_| BenchError::Invariant("collector thread panicked".into()))?;
                if !still_stalled {
                    return Err(BenchError::Invariant(
                        "probe outlasted the stalled destroy phase".into(),
                    ));
                }
                for (lat, fm) in per_thread {
                    during.extend(lat);
                    find_max = find_max.max(fm);
                }
                Ok(())
            })
        })?;
        report.rows.push(row);
        let stalled_max = during.iter().copied().max().unwrap_or_default();
        report.stalls.push(StallProbe {
            idle_median: median(&mut idle),
            stalled_median: median(&mut during),
            stalled_max,
            find_max,
            samples: during.len(),
        });
        for h in kept {
            owner.unregister_atom(h)?;
        }
        report.audits.push(AuditSummary::of(&table, None, workload.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::expected_unique;

    fn cfg(mode: BenchMode, alphabet: usize, threads: Vec<usize>) -> BenchConfig {
        BenchConfig {
            threads,
            alphabet,
            mode,
            reps: 1,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn cpu_clock_advances() {
        let a = process_cpu_time();
        let mut x = 0u64;
        for i in 0..2_000_000u64 {
            x = x.wrapping_mul(31).wrapping_add(i);
        }
        std::hint::black_box(x);
        assert!(process_cpu_time() > a);
    }

    #[test]
    fn preallocated_audit_is_exact() {
        let report = run_bench(&cfg(BenchMode::Preallocated, 30, vec![1, 2])).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[1].row, 2);
        assert_eq!(report.rows[1].threads, 2);
        for a in &report.audits {
            assert_eq!(a.unique_names, expected_unique(30));
            assert!(a.passed(), "{a}");
        }
        assert!(report.rows.iter().all(|r| r.agc_invocations == 0));
        report.verify().unwrap();
    }

    #[test]
    fn agc_active_collects() {
        let report = run_bench(&cfg(BenchMode::AgcActive, 200, vec![1])).unwrap();
        let row = &report.rows[0];
        assert!(row.agc_invocations > 0);
        assert!(row.reclaimed_bytes > 0);
        report.verify().unwrap();
    }

    #[test]
    fn churn_keeps_identities() {
        let report = run_bench(&cfg(BenchMode::Churn, 60, vec![2])).unwrap();
        report.verify().unwrap();
    }

    #[test]
    fn stall_probe_reports_latencies() {
        let mut c = cfg(BenchMode::StallProbe, 60, vec![1]);
        c.stall = Duration::from_millis(300);
        let report = run_bench(&c).unwrap();
        assert_eq!(report.stalls.len(), 1);
        let probe = &report.stalls[0];
        assert!(probe.samples > 0);
        assert!(probe.stalled_max < Duration::from_millis(50), "{probe}");
        assert!(report.rows[0].wall_s >= 0.3);
    }

    #[test]
    fn bad_config_rejected() {
        let err = run_bench(&cfg(BenchMode::Preallocated, 0, vec![1])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
