//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs the shipped Italy configuration end to end.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;

use episens::gsa::{finite_change_decomposition, first_order_given_data, newton_ratios, replicated_factorial};
use episens::uq::{row_rng, FACTOR_NAMES};
use episens_cli::commands::{run_delay_sweep, run_fit, run_gsa, run_uq, Context};
use episens_cli::config::LoadedConfig;
use rand::Rng;

const MEAN_REF: f64 = 1.7769e5;
const SD_REF: f64 = 9.0035e4;
const ACTUAL_TOTAL: f64 = 181_228.0;

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/italy.toml")
}

fn context(out: &Path) -> Context {
    Context::new(LoadedConfig::load(&config_path()).unwrap(), None, Some(out.to_path_buf()))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn idx(name: &str) -> usize {
    FACTOR_NAMES.iter().position(|f| *f == name).unwrap()
}

fn ratio_ok(r: f64) -> bool {
    (3.5..=8.0).contains(&r)
}

fn criterion_fits(ctx: &Context) -> (Outcome, Outcome) {
    let data = ctx.load_data().unwrap();
    let f = run_fit(ctx, &data).unwrap();
    let post = f.post.result.r2_avg;
    let pre = f.pre.result.r2_avg;
    (
        check(post >= 0.99, format!("post-window r2_avg = {post:.4} (>= 0.99)")),
        check(pre >= 0.93, format!("pre-window r2_avg = {pre:.4} (>= 0.93)")),
    )
}

fn criterion_sweep(ctx: &Context) -> Outcome {
    let data = ctx.load_data().unwrap();
    let rows = run_delay_sweep(ctx, &data).unwrap();
    let r2: BTreeMap<u32, f64> = rows.iter().map(|(r, _)| (r.delay_days, r.r2)).collect();
    let best = r2.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(d, _)| *d).unwrap();
    let gap = r2[&5] - r2[&0];
    let listing: Vec<String> = r2.iter().map(|(d, v)| format!("{d}:{v:.4}")).collect();
    check(
        best == 5 && gap >= 0.4,
        format!(
            "argmax delay = {best} (want 5), R2(5) - R2(0) = {gap:.4} (>= 0.4); R2 by delay [{}]",
            listing.join(" ")
        ),
    )
}

fn criterion_uq(ctx: &Context) -> Outcome {
    let data = ctx.load_data().unwrap();
    let o = run_uq(ctx, &data, 10_000).unwrap();
    let s = &o.stats;
    let lo = s.quantiles.iter().find(|q| q.p == 0.025).unwrap().value;
    let hi = s.quantiles.iter().find(|q| q.p == 0.975).unwrap().value;
    let mean_ok = (s.mean / MEAN_REF - 1.0).abs() <= 0.15;
    let sd_ok = (s.sd / SD_REF - 1.0).abs() <= 0.25;
    let bracket = lo <= ACTUAL_TOTAL && ACTUAL_TOTAL <= hi;
    check(
        mean_ok && sd_ok && bracket && s.n == 10_000,
        format!(
            "n = {}, mean = {:.4e} (±15% of {MEAN_REF:e}), sd = {:.4e} (±25% of {SD_REF:e}), 2.5/97.5 pct = {lo:.4e}/{hi:.4e} around {ACTUAL_TOTAL}",
            s.n, s.mean, s.sd
        ),
    )
}

struct GsaChecks {
    ranking: Outcome,
    mean_dim: Outcome,
    pair: Outcome,
    curve: Outcome,
}

fn criteria_gsa(ctx: &Context) -> GsaChecks {
    let data = ctx.load_data().unwrap();
    let o = run_gsa(ctx, &data).unwrap();
    let r = &o.report;
    let iv = idx("intervention_day");
    let dl = idx("delta");
    let t = r.total.as_ref().unwrap();
    let rank_t = r.rank_total.as_ref().unwrap();
    let firsts = [r.rank_first_order[iv], rank_t[iv], r.rank_kuiper[iv]];
    let ratios = [
        r.first_order[iv] / r.first_order[dl],
        t[iv] / t[dl],
        r.kuiper[iv] / r.kuiper[dl],
    ];
    let ranking = check(
        firsts == [1, 1, 1] && ratios.iter().all(|&x| ratio_ok(x)) && r.n_samples >= 100_000,
        format!(
            "n = {}, intervention_day rank under S/T/Ku = {:?}, intervention/delta ratio S/T/Ku = {:.2}/{:.2}/{:.2} (in [3.5, 8])",
            r.n_samples, firsts, ratios[0], ratios[1], ratios[2]
        ),
    );

    let dg = r.mean_dimension.unwrap();
    let reps = r.n_replicates.unwrap();
    let inter = r.interaction_fraction;
    let mean_dim = check(
        reps >= 2000 && (1.05..=1.30).contains(&dg) && inter < 0.12,
        format!("{reps} replicates, D_g = {dg:.4} (in [1.05, 1.30]), 1 - sum S = {inter:.4} (< 0.12)"),
    );

    let singles = r.interaction_means.iter().filter(|b| b.order() == 1);
    let top_single = singles.map(|b| b.mean_abs).fold(0.0, f64::max);
    let mut pairs: Vec<_> = r.interaction_means.iter().filter(|b| b.order() == 2).collect();
    pairs.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs));
    let top = pairs[0];
    let share = top.mean_abs / top_single;
    let names: Vec<&str> = top.subset.iter().map(|&i| FACTOR_NAMES[i]).collect();
    let pair = check(
        top.subset == vec![dl, iv] && (0.10..=0.30).contains(&share),
        format!("largest pair {{{}}} at {:.2}% of the largest singleton (want {{delta, intervention_day}}, 10-30%)", names.join(", "), 100.0 * share),
    );

    let c = o.given.curves.iter().find(|c| c.factor == "intervention_day").unwrap();
    let at = |z: f64| c.centers.iter().position(|&v| v == z).map(|k| c.medians[k]);
    let curve = match (at(0.0), at(7.0)) {
        (Some(m0), Some(m7)) => {
            let q = m7 / m0;
            check((3.0..=5.0).contains(&q), format!("median(delay 7) / median(delay 0) = {m7:.4e}/{m0:.4e} = {q:.3} (in [3, 5])"))
        }
        _ => check(false, "delay 0 or 7 missing from the conditional curve".into()),
    };
    GsaChecks {
        ranking,
        mean_dim,
        pair,
        curve,
    }
}

fn ishigami(x: &[f64]) -> f64 {
    x[0].sin() + 7.0 * x[1].sin().powi(2) + 0.1 * x[2].powi(4) * x[0].sin()
}

fn criterion_oracles() -> Outcome {
    // Ishigami, a = 7, b = 0.1: closed-form partial variances
    let (a, b) = (7.0f64, 0.1f64);
    let v = a * a / 8.0 + b * PI.powi(4) / 5.0 + b * b * PI.powi(8) / 18.0 + 0.5;
    let exact = [0.5 * (1.0 + b * PI.powi(4) / 5.0).powi(2) / v, a * a / 8.0 / v, 0.0];
    let n = 100_000;
    let rows: Vec<[f64; 3]> = (0..n as u64)
        .map(|k| {
            let mut rng = row_rng(2024, k);
            [0; 3].map(|_| rng.gen_range(-PI..PI))
        })
        .collect();
    let y: Vec<f64> = rows.iter().map(|r| ishigami(r)).collect();
    let s: Vec<f64> = (0..3)
        .map(|j| first_order_given_data(&rows.iter().map(|r| r[j]).collect::<Vec<_>>(), &y, 50).unwrap())
        .collect();
    let ishigami_ok = (0..3).all(|j| (s[j] - exact[j]).abs() <= 0.02);

    // dyadic inputs keep sums and products exact
    let dyadic = |rng: &mut rand_chacha::ChaCha8Rng| (0..6).map(|_| rng.gen_range(-1024i32..1024) as f64 / 256.0).collect::<Vec<f64>>();
    let additive = |x: &[f64]| -> Result<f64, Infallible> { Ok(x[0] + 2.0 * x[1] - x[2] + 0.5 * x[3] + x[4] - 3.0 * x[5]) };
    let ens = replicated_factorial(additive, dyadic, 1000, 7).unwrap();
    let additive_ok = ens
        .replicates
        .iter()
        .all(|r| (1..64usize).filter(|m| m.count_ones() > 1).all(|m| r.effects[m] == 0.0));

    let product = |x: &[f64]| -> Result<f64, Infallible> { Ok(x[0] * x[1]) };
    let pens = replicated_factorial(product, |rng| dyadic(rng)[..2].to_vec(), 1000, 8).unwrap();
    let mut newton_ok = true;
    let mut newton_checked = 0;
    for r in &pens.replicates {
        if r.delta_x(0) != 0.0 && r.delta_x(1) != 0.0 {
            newton_ok &= newton_ratios(r).unwrap()[0].ratio == 1.0;
            newton_checked += 1;
        }
    }

    let smooth = |x: &[f64]| -> Result<f64, Infallible> {
        Ok(ishigami(x) * (1.0 + x[3] * x[4]).exp() + x[5] * x[0] * x[2] + x[3].powi(3) * x[5].cos())
    };
    let cont = |rng: &mut rand_chacha::ChaCha8Rng| (0..6).map(|_| rng.gen_range(-PI..PI)).collect::<Vec<f64>>();
    let sens = replicated_factorial(smooth, cont, 1000, 9).unwrap();
    let resid = sens.max_identity_residual();
    // the single-call path must agree with the replicated one
    let r0 = &sens.replicates[0];
    let direct = finite_change_decomposition(smooth, &r0.x_from, &r0.x_to).unwrap();
    let identity_ok = resid <= 1e-9 && direct == *r0;

    check(
        ishigami_ok && additive_ok && newton_ok && newton_checked > 900 && identity_ok,
        format!(
            "Ishigami S = {:.4}/{:.4}/{:.4} vs {:.4}/{:.4}/{:.4} (±0.02); additive interactions all zero: {additive_ok}; x1*x2 Newton ratio == 1 on {newton_checked} pairs: {newton_ok}; max identity residual over 1000 replicates = {resid:.2e}",
            s[0], s[1], s[2], exact[0], exact[1], exact[2]
        ),
    )
}

/// Desk-scale copy of the shipped config with absolute paths.
fn small_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(config_path()).unwrap();
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/dpc-covid19-ita-andamento-nazionale.csv");
    let text = text
        .replace("\"../data/dpc-covid19-ita-andamento-nazionale.csv\"", &format!("{:?}", data.display().to_string()))
        .replace("out = \"../out\"\n", "")
        .replace("n = 10000", "n = 2000")
        .replace("n_samples = 100000", "n_samples = 2000")
        .replace("replicates = 4000", "replicates = 40")
        .replace("bins = 50", "bins = 20");
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_determinism(tmp: &Path) -> Outcome {
    let cfg = small_config(tmp);
    let commands = ["fit", "forecast", "delay-sweep", "uq", "gsa"];
    let mut bad = Vec::new();
    let mut files = 0;
    for cmd in commands {
        let mut runs = Vec::new();
        for (k, threads) in [1, 1, 8, 8].into_iter().enumerate() {
            let out = tmp.join(format!("{cmd}-{k}-t{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_episens"))
                .args([cmd, "--config"])
                .arg(&cfg)
                .args(["--seed", "7", "--threads", &threads.to_string(), "--out"])
                .arg(&out)
                .output()
                .unwrap();
            if !status.status.success() {
                bad.push(format!("{cmd} exited with {:?}", status.status.code()));
                break;
            }
            runs.push(snapshot(&out));
        }
        if runs.len() == 4 {
            files += runs[0].len();
            if runs.iter().any(|r| *r != runs[0]) {
                bad.push(format!("{cmd} outputs differ"));
            }
        }
    }
    check(
        bad.is_empty() && files > 0,
        format!(
            "{} commands x 2 runs x {{1, 8}} threads, {files} files compared byte for byte{}",
            commands.len(),
            if bad.is_empty() { String::new() } else { format!("; {}", bad.join("; ")) }
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let ctx = context(&tmp.path().join("unused"));

    let (c1, c2) = criterion_fits(&ctx);
    let c3 = criterion_sweep(&ctx);
    let c4 = criterion_uq(&ctx);
    let g = criteria_gsa(&ctx);
    let c8 = criterion_oracles();
    let c10 = criterion_determinism(tmp.path());

    let results = [
        (1, "post-intervention fit quality", c1),
        (2, "pre-intervention fit quality", c2),
        (3, "delay sweep shape", c3),
        (4, "UQ moments at n = 10,000", c4),
        (5, "factor ranking at n = 100,000", g.ranking),
        (6, "mean dimension", g.mean_dim),
        (7, "largest interaction pair", g.pair),
        (8, "estimator oracles", c8),
        (9, "conditional-curve delay ratio", g.curve),
        (10, "determinism at 1 and 8 threads", c10),
    ];
    println!();
    let mut failed = 0;
    for (k, name, o) in &results {
        println!("[{}] criterion {k:>2}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
