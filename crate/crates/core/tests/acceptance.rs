//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line and the
//! process exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nightrain::config::Config;
use nightrain::denoise::{
    denoise_with, gradcheck, median_denoise, save_log_csv, synthesize_stages, train_curriculum, train_schedule,
    validation_psnr, Checkpoint, GradcheckConfig, Network, Sample, StageData, TrainContext,
};
use nightrain::detect::{candidate_pairs, greedy_pairs, DetectConfig, PairBounds};
use nightrain::harness::{clean_patches, render_suite, run_ab, write_reports, EvalReport, ScriptedScene, SuiteConfig};
use nightrain::imgcore::{save_image, Split};
use nightrain::photometric::enhance;
use nightrain::quality::{error_stats, psnr, ssim, SsimConfig};
use nightrain::rainsim::apply_stage;
use nightrain::rng::{self, combine, derive_seed};
use nightrain::track::{assign, asymmetry, kf_predict, kf_update, KalmanState, DIM};
use nightrain::GrayImage;

type Outcome = Result<String, String>;

/// Seeds of the denoiser fixture and the evaluation suites.
const PATCH_SEED: u64 = 21;
const STAGE_SEED: u64 = 22;
const HELD_OUT_SEED: u64 = 23;
const HELD_OUT_RAIN_SEED: u64 = 24;
const MIXED_RAIN_SEED: u64 = 25;
const TRAIN_SUITE_SEED: u64 = 11;
const TEST_SUITE_SEED: u64 = 12;
const FIXTURE_SEED: u64 = 31;

struct Ledger {
    lines: Vec<(String, bool, String)>,
}

impl Ledger {
    fn record(&mut self, name: &str, outcome: Outcome) {
        let (ok, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        println!("criterion {name}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
        self.lines.push((name.to_string(), ok, detail));
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_image(r: &mut rng::Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng::unit(r)).unwrap()
}

// ---------------------------------------------------------------- metrics

fn oracle_mse_mae(a: &GrayImage, b: &GrayImage) -> (f64, f64) {
    let n = a.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        se += (x - y) * (x - y);
        ae += (x - y).abs();
    }
    (se / n, ae / n)
}

/// Direct windowed SSIM: two-pass moments per window, plain summation.
fn oracle_ssim(a: &GrayImage, b: &GrayImage, cfg: &SsimConfig) -> f64 {
    let win = cfg.window;
    let r = (win / 2) as f64;
    let mut k = vec![0.0; win * win];
    for v in 0..win {
        for u in 0..win {
            let (dx, dy) = (u as f64 - r, v as f64 - r);
            k[v * win + u] = (-(dx * dx + dy * dy) / (2.0 * cfg.gaussian_sigma.powi(2))).exp();
        }
    }
    let ks: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= ks);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let (w, h) = a.dims();
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..=h - win {
        for i in 0..=w - win {
            let px = |img: &GrayImage, u: usize, v: usize| img.data()[(j + v) * w + i + u];
            let (mut mx, mut my) = (0.0, 0.0);
            for v in 0..win {
                for u in 0..win {
                    mx += k[v * win + u] * px(a, u, v);
                    my += k[v * win + u] * px(b, u, v);
                }
            }
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for v in 0..win {
                for u in 0..win {
                    let (dx, dy) = (px(a, u, v) - mx, px(b, u, v) - my);
                    sxx += k[v * win + u] * dx * dx;
                    syy += k[v * win + u] * dy * dy;
                    sxy += k[v * win + u] * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn criterion_metrics() -> Outcome {
    let start = Instant::now();
    let cfg = SsimConfig::default();
    let mut r = rng::rng_from_seed(0x6d65_7472);
    let (mut worst_db, mut worst_ssim, mut worst_stats) = (0.0f64, 0.0f64, 0.0f64);
    let mut self_ok = true;
    for _ in 0..50 {
        let w = 16 + rng::below(&mut r, 49);
        let h = 16 + rng::below(&mut r, 49);
        let a = random_image(&mut r, w, h);
        // mix so pairs range from near-identical to unrelated
        let t = rng::unit(&mut r);
        let noise = random_image(&mut r, w, h);
        let b = GrayImage::from_fn(w, h, |x, y| (1.0 - t) * a.get(x, y) + t * noise.get(x, y)).unwrap();
        let (mse, mae) = oracle_mse_mae(&a, &b);
        let st = error_stats(&a, &b).map_err(|e| e.to_string())?;
        for (got, want) in [(st.mse, mse), (st.mae, mae), (st.l1, mae), (st.rmse, mse.sqrt())] {
            worst_stats = worst_stats.max((got - want).abs());
        }
        let want_db = if mse == 0.0 {
            99.0
        } else {
            (10.0 * (1.0 / mse).log10()).min(99.0)
        };
        worst_db = worst_db.max((psnr(&a, &b, 1.0).map_err(|e| e.to_string())? - want_db).abs());
        worst_ssim = worst_ssim.max((ssim(&a, &b, &cfg).map_err(|e| e.to_string())? - oracle_ssim(&a, &b, &cfg)).abs());
        self_ok &= ssim(&a, &a, &cfg).map_err(|e| e.to_string())? == 1.0;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_db <= 1e-9 && worst_ssim <= 1e-9 && worst_stats <= 1e-12 && self_ok && secs < 10.0,
        format!(
            "50 pairs: max |dPSNR| {worst_db:.2e} dB, max |dSSIM| {worst_ssim:.2e}, max |d stats| {worst_stats:.2e}, \
             ssim(a,a)==1 {self_ok}, {secs:.2}s"
        ),
    )
}

// ----------------------------------------------------------- gradient check

fn criterion_gradcheck() -> Outcome {
    let start = Instant::now();
    let rep = gradcheck(11, &GradcheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        rep.entries.len() == 50 && rep.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "16x16 patch, {} params ({} kink redraws): max rel error {:.2e}, {secs:.1}s",
            rep.entries.len(),
            rep.skipped_kinks,
            rep.max_rel_error
        ),
    )
}

// ------------------------------------------------------------ rain fixture

fn fixture_frames(cfg: &Config) -> Vec<GrayImage> {
    let suite = SuiteConfig {
        scenes: 5,
        frames: 20,
        ..cfg.script.clone()
    };
    render_suite(&suite, "fixture", Split::Train, FIXTURE_SEED)
        .unwrap()
        .into_iter()
        .flat_map(|s| s.frames)
        .map(|f| enhance(&f, &cfg.photometric).unwrap())
        .collect()
}

fn criterion_rain(cfg: &Config, out: &Path) -> Outcome {
    let start = Instant::now();
    let frames = fixture_frames(cfg);
    let stages = cfg.curriculum_stages().map_err(|e| e.to_string())?;
    let mut identity_violations = 0usize;
    let mut mean_db = Vec::new();
    fs::create_dir_all(out).map_err(|e| e.to_string())?;
    for sc in stages.iter().filter(|s| s.stage <= 4) {
        let stage_seed = combine(FIXTURE_SEED, sc.stage as u64);
        let mut acc = 0.0;
        for (i, clean) in frames.iter().enumerate() {
            let f = apply_stage(clean, sc, derive_seed(stage_seed, "fixture", i as u64)).map_err(|e| e.to_string())?;
            for p in 0..clean.len() {
                let l = f.streak_layer.data()[p];
                let composite = (clean.data()[p] + l).clamp(0.0, 1.0);
                if f.pre_blur.data()[p] != composite || (f.mask.data()[p] == 1) != (l > sc.streaks.mask_threshold) {
                    identity_violations += 1;
                }
            }
            acc += psnr(&f.noisy, clean, 1.0).map_err(|e| e.to_string())?;
            save_image(&f.noisy, out.join(format!("stage{}_{i:03}.png", sc.stage))).map_err(|e| e.to_string())?;
        }
        mean_db.push(acc / frames.len() as f64);
    }
    let monotone = mean_db.windows(2).all(|w| w[1] <= w[0]);
    let secs = start.elapsed().as_secs_f64();
    let dbs: Vec<String> = mean_db.iter().map(|v| format!("{v:.2}")).collect();
    check(
        frames.len() == 100 && identity_violations == 0 && monotone && mean_db.len() == 4 && secs < 30.0,
        format!(
            "{} frames: {identity_violations} identity violations, mean PSNR by stage 1-4 [{}] dB, {secs:.1}s",
            frames.len(),
            dbs.join(", ")
        ),
    )
}

// ------------------------------------------------------------- denoiser

struct Denoiser {
    net: Network,
    held_out: Vec<Sample>,
    held_out_clean: Vec<GrayImage>,
    train_secs: f64,
}

fn held_out(cfg: &Config) -> (Vec<GrayImage>, Vec<Sample>) {
    let clean = clean_patches(&cfg.script, &cfg.photometric, 40, 64, 0.5, HELD_OUT_SEED).unwrap();
    let stage3 = cfg
        .curriculum_stages()
        .unwrap()
        .into_iter()
        .find(|s| s.stage == 3)
        .unwrap();
    let samples = synthesize_stages(&clean, &[stage3], "held_out", HELD_OUT_RAIN_SEED)
        .unwrap()
        .remove(0)
        .samples;
    (clean, samples)
}

fn curriculum_stages(cfg: &Config) -> Vec<StageData> {
    let clean = clean_patches(&cfg.script, &cfg.photometric, 200, 64, 0.75, PATCH_SEED).unwrap();
    let stages: Vec<_> = cfg
        .curriculum_stages()
        .unwrap()
        .into_iter()
        .filter(|s| s.stage <= 4)
        .collect();
    synthesize_stages(&clean, &stages, "patch", STAGE_SEED).unwrap()
}

fn train_denoiser(cfg: &Config, out: &Path) -> Result<Denoiser, String> {
    let (held_out_clean, held_out) = held_out(cfg);
    let stages = curriculum_stages(cfg);
    let start = Instant::now();
    let ctx = TrainContext {
        config: &cfg.train,
        ssim: &cfg.ssim,
        validation: &held_out,
    };
    let outcome = train_curriculum(&stages, ctx).map_err(|e| e.to_string())?;
    let train_secs = start.elapsed().as_secs_f64();
    if let Some(msg) = outcome.diverged {
        return Err(format!("training diverged: {msg}"));
    }
    outcome
        .checkpoint
        .save(out.join("checkpoint"))
        .map_err(|e| e.to_string())?;
    save_log_csv(&outcome.log, &out.join("train_log.csv")).map_err(|e| e.to_string())?;
    Ok(Denoiser {
        net: outcome.checkpoint.network,
        held_out,
        held_out_clean,
        train_secs,
    })
}

fn mean_psnr(samples: &[Sample], f: impl Fn(&GrayImage) -> GrayImage) -> f64 {
    samples
        .iter()
        .map(|s| psnr(&f(&s.noisy), &s.clean, 1.0).unwrap())
        .sum::<f64>()
        / samples.len() as f64
}

fn criterion_denoiser(d: &Denoiser) -> Outcome {
    let noisy = mean_psnr(&d.held_out, |n| n.clone());
    let median = mean_psnr(&d.held_out, |n| median_denoise(n, 3).unwrap());
    let net = validation_psnr(&d.net, &d.held_out).map_err(|e| e.to_string())?;
    check(
        net >= noisy + 3.0 && net > median && d.train_secs < 1800.0,
        format!(
            "stage-3 held-out ({} patches): noisy {noisy:.2} dB, median {median:.2} dB, network {net:.2} dB \
             (+{:.2} dB), training {:.0}s",
            d.held_out.len(),
            net - noisy,
            d.train_secs
        ),
    )
}

/// Curriculum against the same number of steps on stage 4 alone, scored on a
/// mixed-severity held-out set. Reported, never gated.
fn ablation(cfg: &Config, curriculum: &Network, out: &Path) -> Result<String, String> {
    let (clean, _) = held_out(cfg);
    let stages: Vec<_> = cfg
        .curriculum_stages()
        .unwrap()
        .into_iter()
        .filter(|s| (2..=4).contains(&s.stage))
        .collect();
    let mixed: Vec<Sample> = synthesize_stages(&clean, &stages, "mixed", MIXED_RAIN_SEED)
        .map_err(|e| e.to_string())?
        .into_iter()
        .flat_map(|s| s.samples)
        .collect();
    let all = curriculum_stages(cfg);
    let stage4 = all.iter().find(|s| s.stage == 4).unwrap();
    let steps = cfg.train.steps_per_stage * 4;
    let ctx = TrainContext {
        config: &cfg.train,
        ssim: &cfg.ssim,
        validation: &mixed,
    };
    let direct = train_schedule(&[(stage4, steps)], ctx).map_err(|e| e.to_string())?;
    let with = validation_psnr(curriculum, &mixed).map_err(|e| e.to_string())?;
    let without = validation_psnr(&direct.checkpoint.network, &mixed).map_err(|e| e.to_string())?;
    let noisy = mean_psnr(&mixed, |n| n.clone());
    let body = format!(
        "variant,steps,mixed_psnr_db\nnoisy,0,{noisy:.4}\ncurriculum,{steps},{with:.4}\nstage4_only,{steps},{without:.4}\n"
    );
    fs::write(out.join("ablation.csv"), body).map_err(|e| e.to_string())?;
    Ok(format!(
        "mixed stages 2-4 ({} samples): noisy {noisy:.2} dB, curriculum {with:.2} dB, stage-4 only {without:.2} dB",
        mixed.len()
    ))
}

fn clean_through(d: &Denoiser) -> f64 {
    d.held_out_clean
        .iter()
        .map(|c| psnr(&denoise_with(&d.net, c).unwrap(), c, 1.0).unwrap())
        .sum::<f64>()
        / d.held_out_clean.len() as f64
}

// -------------------------------------------------------------- tracking

fn brute_force_assignment(cost: &[Vec<f64>], cols: usize) -> f64 {
    fn go(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, left: usize) -> f64 {
        if left == 0 {
            return 0.0;
        }
        if i == cost.len() {
            return f64::INFINITY;
        }
        let mut best = if cost.len() - i > left {
            go(cost, i + 1, used, left)
        } else {
            f64::INFINITY
        };
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[i][j] + go(cost, i + 1, used, left - 1));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cols], cost.len().min(cols))
}

type Mat = [[f64; DIM]; DIM];

fn oracle_predict(p: &Mat, q: &[f64; DIM]) -> Mat {
    let mut a = [[0.0; DIM]; DIM];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
        if i < 3 {
            row[i + 3] = 1.0;
        }
    }
    let mut ap = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            ap[i][j] = (0..DIM).map(|k| a[i][k] * p[k][j]).sum();
        }
    }
    let mut out = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            out[i][j] = (0..DIM).map(|k| ap[i][k] * a[j][k]).sum::<f64>() + if i == j { q[i] } else { 0.0 };
        }
    }
    out
}

fn random_spd(r: &mut rng::Rng) -> Mat {
    let mut m = [[0.0; DIM]; DIM];
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v = rng::uniform(r, -1.0, 1.0);
        }
    }
    let mut p = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            p[i][j] = (0..DIM).map(|k| m[i][k] * m[j][k]).sum();
        }
        p[i][i] += 0.5;
    }
    p
}

fn criterion_tracking() -> Outcome {
    let start = Instant::now();
    let mut r = rng::rng_from_seed(0x7472_6163);
    let mut worst_assign = 0.0f64;
    let mut bad_matchings = 0usize;
    for _ in 0..100 {
        let rows = 1 + rng::below(&mut r, 6);
        let cols = 1 + rng::below(&mut r, 6);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng::uniform(&mut r, 0.0, 50.0)).collect())
            .collect();
        let a = assign(&cost, cols, f64::INFINITY);
        let sum: f64 = a.pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        let mut seen_r = vec![false; rows];
        let mut seen_c = vec![false; cols];
        for &(i, j) in &a.pairs {
            if seen_r[i] || seen_c[j] {
                bad_matchings += 1;
            }
            seen_r[i] = true;
            seen_c[j] = true;
        }
        if a.pairs.len() != rows.min(cols) || (sum - a.total_cost).abs() > 1e-9 {
            bad_matchings += 1;
        }
        worst_assign = worst_assign.max((a.total_cost - brute_force_assignment(&cost, cols)).abs());
    }

    let q = [0.01, 0.02, 0.03, 0.1, 0.2, 0.3];
    let mut worst_matrix = 0.0f64;
    let mut worst_scalar = 0.0f64;
    for _ in 0..100 {
        let p = random_spd(&mut r);
        let x: [f64; DIM] = std::array::from_fn(|_| rng::uniform(&mut r, -20.0, 20.0));
        let s = kf_predict(&KalmanState { x, p }, &q).map_err(|e| e.to_string())?;
        let want = oracle_predict(&p, &q);
        for i in 0..DIM {
            for j in 0..DIM {
                worst_matrix = worst_matrix.max((s.p[i][j] - want[i][j]).abs());
            }
        }
        // per axis: pos' = pos + 2 c + vel + q_pos, c' = c + vel, vel' = vel + q_vel, x' = x + v
        for k in 0..3 {
            let (pp, c, pv) = (p[k][k], p[k][k + 3], p[k + 3][k + 3]);
            let block = [
                s.p[k][k] - (pp + 2.0 * c + pv + q[k]),
                s.p[k][k + 3] - (c + pv),
                s.p[k + 3][k + 3] - (pv + q[k + 3]),
                s.x[k] - (x[k] + x[k + 3]),
            ];
            worst_scalar = block.iter().fold(worst_scalar, |m, v| m.max(v.abs()));
        }
    }

    let mut p = [[0.0; DIM]; DIM];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = if i < 3 { 4.0 } else { 25.0 };
    }
    let mut s = KalmanState {
        x: [60.0, 40.0, 10.0, 0.0, 0.0, 0.0],
        p,
    };
    let mut worst_sym = 0.0f64;
    for t in 0..1000 {
        s = kf_predict(&s, &q).map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max(asymmetry(&s.p));
        let truth = [60.0 + 0.1 * t as f64, 40.0 + 0.05 * t as f64, 10.0 + 0.02 * t as f64];
        let z: Vec<f64> = truth.iter().map(|v| v + rng::uniform(&mut r, -1.0, 1.0)).collect();
        // alternate full and position-only measurements
        s = if t % 3 == 2 {
            kf_update(&s, &z[..2], &[0, 1], &[1.0, 1.0])
        } else {
            kf_update(&s, &z, &[0, 1, 2], &[1.0, 1.0, 1.0])
        }
        .map_err(|e| e.to_string())?;
        worst_sym = worst_sym.max(asymmetry(&s.p));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_assign <= 1e-9 && bad_matchings == 0 && worst_matrix <= 1e-12 && worst_scalar <= 1e-12
            && worst_sym <= 1e-12 && secs < 10.0,
        format!(
            "100 matrices up to 6x6: max cost gap {worst_assign:.2e}, {bad_matchings} invalid; predict vs matrix \
             {worst_matrix:.2e}, vs closed form {worst_scalar:.2e}; max asymmetry over 1000 steps {worst_sym:.2e}, {secs:.2}s"
        ),
    )
}

// --------------------------------------------------------------- pairing

fn acceptable(b: &PairBounds, p: [f64; 2], q: [f64; 2]) -> bool {
    let dx = (p[0] - q[0]).abs();
    (p[1] - q[1]).abs() < b.eps_y && dx >= b.d_min && dx <= b.d_max && dx > 0.0
}

/// Every maximal matching over the acceptable pairs, as sorted pair lists.
fn maximal_matchings(edges: &[(usize, usize)], n: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(
        edges: &[(usize, usize)],
        k: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if k == edges.len() {
            if edges.iter().all(|&(a, b)| used[a] || used[b]) {
                let mut m = cur.clone();
                m.sort();
                out.push(m);
            }
            return;
        }
        let (a, b) = edges[k];
        if !used[a] && !used[b] {
            used[a] = true;
            used[b] = true;
            cur.push((a, b));
            go(edges, k + 1, used, cur, out);
            cur.pop();
            used[a] = false;
            used[b] = false;
        }
        go(edges, k + 1, used, cur, out);
    }
    let mut out = Vec::new();
    go(edges, 0, &mut vec![false; n], &mut Vec::new(), &mut out);
    out
}

fn criterion_pairing() -> Outcome {
    let start = Instant::now();
    let (w, h) = (128usize, 96usize);
    let b = DetectConfig::default().bounds(w, h);
    let mut r = rng::rng_from_seed(0x7061_6972);
    let (mut bad_candidates, mut invalid, mut not_maximal, mut order_mismatch, mut total_pairs) = (0, 0, 0, 0, 0);
    for _ in 0..200 {
        let n = rng::below(&mut r, 9);
        // a few shared rows so many configurations have competing pairs
        let rows: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, 10.0, h as f64 - 10.0)).collect();
        let points: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let y = rows[rng::below(&mut r, 3)] + rng::uniform(&mut r, -2.0 * b.eps_y, 2.0 * b.eps_y);
                [rng::uniform(&mut r, 0.0, w as f64), y]
            })
            .collect();
        let eligible: Vec<bool> = (0..n).map(|_| rng::unit(&mut r) < 0.85).collect();

        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if eligible[i] && eligible[j] && acceptable(&b, points[i], points[j]) {
                    edges.push(if points[i][0] < points[j][0] { (i, j) } else { (j, i) });
                }
            }
        }
        let mut got_cands = candidate_pairs(&points, &eligible, &b);
        got_cands.sort();
        let mut want_cands = edges.clone();
        want_cands.sort();
        if got_cands != want_cands {
            bad_candidates += 1;
        }

        let pairs = greedy_pairs(&points, &eligible, &b);
        total_pairs += pairs.len();
        let mut used = vec![false; n];
        for &(l, rr) in &pairs {
            if used[l]
                || used[rr]
                || !eligible[l]
                || !eligible[rr]
                || !acceptable(&b, points[l], points[rr])
                || points[l][0] >= points[rr][0]
            {
                invalid += 1;
            }
            used[l] = true;
            used[rr] = true;
        }
        let mut sorted = pairs.clone();
        sorted.sort();
        if !maximal_matchings(&edges, n).contains(&sorted) {
            not_maximal += 1;
        }

        // reference greedy: smallest vertical gap, then horizontal gap, then leftmost
        let mut order = edges.clone();
        order.sort_by(|&(l1, r1), &(l2, r2)| {
            let key = |l: usize, r: usize| {
                (
                    (points[l][1] - points[r][1]).abs(),
                    points[r][0] - points[l][0],
                    points[l][0],
                )
            };
            let (a, c) = (key(l1, r1), key(l2, r2));
            a.0.total_cmp(&c.0).then(a.1.total_cmp(&c.1)).then(a.2.total_cmp(&c.2))
        });
        let mut taken = vec![false; n];
        let reference: Vec<(usize, usize)> = order
            .into_iter()
            .filter(|&(l, rr)| {
                let free = !taken[l] && !taken[rr];
                if free {
                    taken[l] = true;
                    taken[rr] = true;
                }
                free
            })
            .collect();
        if reference != pairs {
            order_mismatch += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        bad_candidates + invalid + not_maximal + order_mismatch == 0 && secs < 10.0,
        format!(
            "200 configurations of <= 8 proposals ({total_pairs} pairs): {bad_candidates} candidate mismatches, \
             {invalid} invalid pairs, {not_maximal} non-maximal, {order_mismatch} greedy-order mismatches, {secs:.2}s"
        ),
    )
}

// -------------------------------------------------------------- end to end

fn suites(cfg: &Config) -> (Vec<ScriptedScene>, Vec<ScriptedScene>) {
    let train_cfg = SuiteConfig {
        scenes: 10,
        ..cfg.script.clone()
    };
    (
        render_suite(&train_cfg, "train", Split::Train, TRAIN_SUITE_SEED).unwrap(),
        render_suite(&cfg.script, "test", Split::Test, TEST_SUITE_SEED).unwrap(),
    )
}

struct AbResult {
    raw: EvalReport,
    denoised: EvalReport,
    secs: f64,
}

fn run_end_to_end(cfg: &Config, net: &Network, out: &Path) -> Result<AbResult, String> {
    let (train, test) = suites(cfg);
    let start = Instant::now();
    let (raw, den) = run_ab(cfg, &train, &test, net).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    write_reports(out, &[raw.report.clone(), den.report.clone()]).map_err(|e| e.to_string())?;
    Ok(AbResult {
        raw: raw.report,
        denoised: den.report,
        secs,
    })
}

fn criterion_end_to_end(ab: &AbResult, train_secs: f64, scenes: usize) -> Outcome {
    let (r, d) = (&ab.raw, &ab.denoised);
    let total = train_secs + ab.secs;
    check(
        scenes == 20
            && d.proposal_recall >= r.proposal_recall + 5.0
            && d.early_warning_success >= r.early_warning_success + 10.0
            && d.avg_fps <= r.avg_fps
            && total < 900.0,
        format!(
            "{scenes} stage-3 scenes: recall {:.2} -> {:.2}, accuracy {:.2} -> {:.2}, early warning {:.1} -> {:.1}, \
             fps {:.1} -> {:.1}, train + eval {total:.0}s",
            r.proposal_recall,
            d.proposal_recall,
            r.classifier_accuracy,
            d.classifier_accuracy,
            r.early_warning_success,
            d.early_warning_success,
            r.avg_fps,
            d.avg_fps
        ),
    )
}

// ------------------------------------------------------------ determinism

/// Relative path to file bytes. Timing columns are dropped from the
/// evaluation tables because they are wall-clock measurements.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            let name = rel.file_name().unwrap().to_string_lossy().to_string();
            let bytes = fs::read(&p).unwrap();
            let bytes = match name.as_str() {
                "report.csv" => drop_column(&bytes, "avg_fps"),
                // carries fps alongside the scene rows already compared via scenes.csv
                "report.json" => continue,
                _ => bytes,
            };
            out.insert(rel, bytes);
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn drop_column(csv: &[u8], column: &str) -> Vec<u8> {
    let text = String::from_utf8_lossy(csv);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let skip = header.iter().position(|c| *c == column);
    let keep = |line: &str| -> String {
        line.split(',')
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, v)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = keep(&header.join(","));
    for l in lines {
        out.push('\n');
        out.push_str(&keep(l));
    }
    out.into_bytes()
}

fn criterion_determinism(first: &Path, second: &Path) -> Outcome {
    let (a, b) = (snapshot(first), snapshot(second));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let ckpt = Checkpoint::load(first.join("denoiser/checkpoint")).is_ok();
    check(
        differing.is_empty() && ckpt && !a.is_empty(),
        format!(
            "{} artifacts compared byte for byte (images, checkpoint, logs, csv without fps, svg): {} differ{}",
            a.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" [{}]", differing.join(", "))
            }
        ),
    )
}

// ------------------------------------------------------------------- main

struct Run {
    denoiser: Result<Denoiser, String>,
    ab: Result<AbResult, String>,
    rain: Outcome,
}

fn full_run(cfg: &Config, dir: &Path) -> Run {
    let _ = fs::remove_dir_all(dir);
    let rain = criterion_rain(cfg, &dir.join("rain"));
    let denoiser = train_denoiser(cfg, &dir.join("denoiser"));
    let ab = match &denoiser {
        Ok(d) => run_end_to_end(cfg, &d.net, &dir.join("eval")),
        Err(e) => Err(format!("no checkpoint: {e}")),
    };
    Run { denoiser, ab, rain }
}

fn main() {
    let total = Instant::now();
    let cfg = Config::default();
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let mut ledger = Ledger { lines: Vec::new() };

    ledger.record("1 (quality metrics vs oracles)", criterion_metrics());
    ledger.record("2 (gradient check)", criterion_gradcheck());

    let first = full_run(&cfg, &root.join("run1"));
    ledger.record("3 (rain compositing and stage monotonicity)", first.rain.clone());
    ledger.record(
        "4 (denoiser beats noisy and median)",
        first
            .denoiser
            .as_ref()
            .map_err(Clone::clone)
            .and_then(criterion_denoiser),
    );
    if let Ok(d) = &first.denoiser {
        match ablation(&cfg, &d.net, &root) {
            Ok(row) => println!("report   ablation (not gated): {row}"),
            Err(e) => println!("report   ablation (not gated) failed: {e}"),
        }
        println!(
            "report   clean-through PSNR (not gated): {:.2} dB over {} clean patches",
            clean_through(d),
            d.held_out_clean.len()
        );
    }
    ledger.record("5 (assignment and Kalman oracles)", criterion_tracking());
    ledger.record("6 (pairing oracle)", criterion_pairing());
    let outcome7 = match (&first.denoiser, &first.ab) {
        (Ok(d), Ok(ab)) => criterion_end_to_end(ab, d.train_secs, cfg.script.scenes),
        (_, Err(e)) | (Err(e), _) => Err(e.clone()),
    };
    ledger.record("7 (end-to-end A/B)", outcome7);

    let second = full_run(&cfg, &root.join("run2"));
    let outcome8 = if second.denoiser.is_err() || second.ab.is_err() {
        Err("repeat run failed".to_string())
    } else {
        criterion_determinism(&root.join("run1"), &root.join("run2"))
    };
    ledger.record("8 (determinism)", outcome8);

    let failed = ledger.lines.iter().filter(|l| !l.1).count();
    println!(
        "acceptance: {} of {} criteria passed in {:.0}s; artifacts under {}",
        ledger.lines.len() - failed,
        ledger.lines.len(),
        total.elapsed().as_secs_f64(),
        root.display()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
