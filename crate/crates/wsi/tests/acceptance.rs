//! Acceptance criteria 1–9. Runs without the libtest harness so every
//! criterion prints exactly one PASS or FAIL line; exits non-zero on any FAIL.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsi::config::PipelineConfig;
use wsi::dataset::{generate_dataset, tissue_truth_path, GenerateParams};
use wsi::formats::read_mask;
use wsi::models::{forest_to_text, ForestFile};
use wsi::pipeline::{run_pipeline, RunReport, REPORT_FILE};
use wsi_core::eval::{froc, roc_auc, Detection, DEFAULT_FP_RATES};
use wsi_core::features::{extract_features, FeatureConfig, BLOCK_LEN, FEATURE_COUNT};
use wsi_core::forest::{train_forest, ForestConfig, Node};
use wsi_core::geometry::{Point, Polygon};
use wsi_core::heatmap::{connected_components, region_properties, Heatmap};
use wsi_core::otsu::otsu_threshold;
use wsi_core::patch::Annotation;
use wsi_core::raster::BinaryGrid;

const OTSU_CASES: usize = 1000;
const OTSU_BUDGET: Duration = Duration::from_secs(5);
const AUC_CASES: usize = 500;
const AUC_TOLERANCE: f64 = 1e-12;
const AUC_BUDGET: Duration = Duration::from_secs(10);
const FROC_CASES: usize = 200;
const BAR_TOLERANCE: f64 = 1e-4;
const LABELING_CASES: usize = 500;
const FEATURE_CASES: usize = 200;
const FEATURE_TOLERANCE: f64 = 1e-9;
const OOB_LIMIT: f64 = 0.05;
const E2E_SLIDES: usize = 48;
const E2E_MIN_AUC: f64 = 0.95;
const E2E_MIN_FROC: f64 = 0.80;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);
const JACCARD_SLIDES: usize = 20;
const JACCARD_MIN: f64 = 0.95;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. Otsu

/// Exact argmax of between-class variance, smallest threshold on ties.
///
/// w0·w1·(μ0−μ1)² = (N·S0 − N0·S)² / (N²·N0·N1), so candidates are compared
/// by cross-multiplying integers.
fn otsu_exact(hist: &[u64; 256]) -> u8 {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let mut best: Option<(usize, u128, u128)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for (t, &c) in hist.iter().enumerate() {
        n0 += c as u128;
        s0 += t as u128 * c as u128;
        let n1 = n - n0;
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0, 1)
        } else {
            let d = (n * s0).abs_diff(n0 * s);
            (d * d, n0 * n1)
        };
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    best.map_or(0, |b| b.0 as u8)
}

fn criterion_otsu() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for case in 0..OTSU_CASES {
        let mut h = [0u64; 256];
        match case % 3 {
            // Dense noise.
            0 => h.iter_mut().for_each(|c| *c = rng.gen_range(0..1000)),
            // Sparse spikes.
            1 => {
                for _ in 0..rng.gen_range(2..12) {
                    h[rng.gen_range(0..256)] += rng.gen_range(1..1000);
                }
            }
            // Two bumps.
            _ => {
                for (m, w) in [(rng.gen_range(10..120), 20.0), (rng.gen_range(130..245), 15.0)] {
                    for _ in 0..rng.gen_range(200..2000) {
                        let v = m as f64 + w * (rng.gen::<f64>() + rng.gen::<f64>() + rng.gen::<f64>() - 1.5);
                        h[v.clamp(0.0, 255.0) as usize] += 1;
                    }
                }
            }
        }
        if h.iter().filter(|&&c| c > 0).count() < 2 {
            h[0] += 1;
            h[255] += 1;
        }
        let got = otsu_threshold(&h).map_err(|e| e.to_string())?;
        let want = otsu_exact(&h);
        check(got == want, || format!("case {case}: threshold {got}, exhaustive argmax {want}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < OTSU_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{OTSU_CASES} histograms match the exact argmax in {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. AUC

fn pair_auc(s: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pairs) = (0u64, 0u64);
    for a in s.iter().filter(|a| a.1) {
        for b in s.iter().filter(|b| !b.1) {
            pairs += 2;
            wins += match a.0.partial_cmp(&b.0) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    wins as f64 / pairs as f64
}

fn criterion_auc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..AUC_CASES {
        let n = rng.gen_range(2..=200);
        let levels = if case % 2 == 0 { 10 } else { 1_000_000 };
        let mut s: Vec<(f64, bool)> =
            (0..n).map(|_| (rng.gen_range(0..levels) as f64 / levels as f64, rng.gen_bool(0.4))).collect();
        s[0].1 = true;
        s[1].1 = false;
        let got = roc_auc(&s).map_err(|e| e.to_string())?.auc;
        let diff = (got - pair_auc(&s)).abs();
        worst = worst.max(diff);
        check(diff <= AUC_TOLERANCE, || format!("case {case}: differs by {diff:e}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < AUC_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{AUC_CASES} score sets, max |Δ| {worst:e} in {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 3. FROC

fn rect(x: f64, y: f64, w: f64, h: f64) -> Polygon {
    Polygon::new(vec![Point::new(x, y), Point::new(x + w, y), Point::new(x + w, y + h), Point::new(x, y + h)])
}

/// Enumerates every confidence cut-off and recounts hits and FPs from scratch.
fn reference_froc(dets: &[Detection], gt: &[Annotation], rates: &[f64]) -> Vec<f64> {
    let total: usize = gt.iter().map(|a| a.polygons.len()).sum();
    let mut cuts: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
    cuts.push(f64::INFINITY);
    let points: Vec<(f64, f64)> = cuts
        .iter()
        .map(|&t| {
            let kept: Vec<&Detection> = dets.iter().filter(|d| d.confidence >= t).collect();
            let hits = gt
                .iter()
                .flat_map(|a| a.polygons.iter().map(move |p| (a, p)))
                .filter(|(a, p)| kept.iter().any(|d| d.slide_id == a.slide_id && p.contains_pixel(d.x, d.y)))
                .count();
            let fps = kept
                .iter()
                .filter(|d| {
                    let a = gt.iter().find(|a| a.slide_id == d.slide_id).expect("detection on a known slide");
                    !a.polygons.iter().any(|p| p.contains_pixel(d.x, d.y))
                })
                .count();
            (fps as f64 / gt.len() as f64, hits as f64 / total as f64)
        })
        .collect();
    rates.iter().map(|&r| points.iter().filter(|p| p.0 <= r).map(|p| p.1).fold(0.0, f64::max)).collect()
}

fn criterion_froc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..FROC_CASES {
        let n_slides = rng.gen_range(1..=5);
        let mut gt: Vec<Annotation> = (0..n_slides).map(|s| Annotation::new(format!("s{s}"), vec![])).collect();
        for _ in 0..rng.gen_range(1..=5) {
            let s = rng.gen_range(0..n_slides);
            let (x, y) = (rng.gen_range(0..10) as f64 * 10.0, rng.gen_range(0..10) as f64 * 10.0);
            gt[s].polygons.push(rect(x, y, rng.gen_range(5..40) as f64, rng.gen_range(5..40) as f64));
        }
        let dets: Vec<Detection> = (0..rng.gen_range(0..=12))
            .map(|_| Detection {
                slide_id: format!("s{}", rng.gen_range(0..n_slides)),
                x: rng.gen_range(0..120),
                y: rng.gen_range(0..120),
                confidence: rng.gen_range(1..8) as f64 / 7.0,
            })
            .collect();
        let r = froc(&dets, &gt, &DEFAULT_FP_RATES).map_err(|e| e.to_string())?;
        let want = reference_froc(&dets, &gt, &DEFAULT_FP_RATES);
        check(r.sensitivities == want, || {
            format!("case {case}: sensitivities {:?}, reference {want:?}", r.sensitivities)
        })?;
        let score = want.iter().sum::<f64>() / want.len() as f64;
        check(r.score == score, || format!("case {case}: score {} vs {score}", r.score))?;
        check(r.sensitivities.windows(2).all(|w| w[0] <= w[1]), || format!("case {case}: not monotone"))?;
    }
    Ok(format!("{FROC_CASES} instances equal the exhaustive reference, all monotone"))
}

// ---------------------------------------------------------------------------
// 4. Region properties and labeling

fn heatmap_of(w: usize, h: usize, values: Vec<f64>) -> Heatmap {
    Heatmap::from_grid("s", w, h, 256, (0, 0), values).expect("valid heatmap")
}

fn ones(w: usize, h: usize, cells: &[(usize, usize)]) -> Heatmap {
    let mut v = vec![0.0; w * h];
    for &(x, y) in cells {
        v[y * w + x] = 1.0;
    }
    heatmap_of(w, h, v)
}

/// BFS labeling with 8-connectivity; regions by area descending, then by
/// raster position of their first cell; cells in raster order.
fn flood_fill(w: usize, h: usize, on: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; w * h];
    let mut regions = Vec::new();
    for start in 0..w * h {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut cells = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            cells.push((x as usize, y as usize));
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if on[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        cells.sort_by_key(|&(x, y)| (y, x));
        regions.push((start, cells));
    }
    regions.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    regions.into_iter().map(|r| r.1).collect()
}

fn criterion_regionprops() -> Outcome {
    let single = region_properties(0, &[(3, 3)], &ones(8, 8, &[(3, 3)]));
    check(single.eccentricity == 0.0 && single.extent == 1.0 && single.solidity == 1.0, || {
        format!("single cell: ecc {} extent {} solidity {}", single.eccentricity, single.extent, single.solidity)
    })?;

    // A 10×1 bar has continuous second moments (10² / 12, 1 / 12).
    let bar_cells: Vec<(usize, usize)> = (0..10).map(|x| (x + 2, 4)).collect();
    let bar = region_properties(0, &bar_cells, &ones(16, 8, &bar_cells));
    let closed_form = (1.0f64 - (1.0 / 12.0) / (100.0 / 12.0)).sqrt();
    check((bar.eccentricity - closed_form).abs() <= BAR_TOLERANCE && bar.extent == 1.0, || {
        format!("bar: ecc {} (closed form {closed_form}), extent {}", bar.eccentricity, bar.extent)
    })?;

    let disc_cells: Vec<(usize, usize)> = (0..17usize)
        .flat_map(|y| (0..17usize).map(move |x| (x, y)))
        .filter(|&(x, y)| {
            let (dx, dy) = (x as f64 - 8.0, y as f64 - 8.0);
            dx * dx + dy * dy <= 64.0
        })
        .collect();
    let disc = region_properties(0, &disc_cells, &ones(17, 17, &disc_cells));
    check(disc.eccentricity <= 0.1 && disc.solidity >= 0.95, || {
        format!("disc r=8: ecc {} solidity {}", disc.eccentricity, disc.solidity)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..LABELING_CASES {
        let density = rng.gen_range(0.05..0.7);
        let on: Vec<bool> = (0..64 * 64).map(|_| rng.gen_bool(density)).collect();
        let grid = BinaryGrid::from_cells(64, 64, on.clone()).map_err(|e| e.to_string())?;
        let mut got = connected_components(&grid);
        got.iter_mut().for_each(|r| r.sort_by_key(|&(x, y)| (y, x)));
        check(got == flood_fill(64, 64, &on), || format!("labeling case {case} (density {density:.2}) differs"))?;
    }
    Ok(format!(
        "single cell exact, bar ecc {:.6} vs {closed_form:.6}, disc ecc {:.4} solidity {:.4}, {LABELING_CASES} grids match flood fill",
        bar.eccentricity, disc.eccentricity, disc.solidity
    ))
}

// ---------------------------------------------------------------------------
// 5. Feature schema

/// Cells of a bounding box whose centers lie inside or on the convex hull of `pts`.
fn convex_cell_count(mut pts: Vec<(f64, f64)>, (x0, y0, x1, y1): (usize, usize, usize, usize)) -> usize {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    (y0..=y1)
        .flat_map(|y| (x0..=x1).map(move |x| (x as f64, y as f64)))
        .filter(|&c| (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], c) >= 0.0))
        .count()
}

/// The 14 slot values of one threshold block, recomputed from first principles.
fn oracle_block(w: usize, h: usize, vals: &[f64], t: f64) -> Vec<f64> {
    let scored: Vec<f64> = vals.iter().copied().filter(|&v| v >= 0.0).collect();
    let n = scored.len() as f64;
    let mean = scored.iter().sum::<f64>() / n;
    let std = (scored.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max_p = scored.iter().copied().fold(0.0, f64::max);
    let on: Vec<bool> = vals.iter().map(|&v| v >= 0.0 && v > t).collect();
    let regions = flood_fill(w, h, &on);
    let mut out = vec![0.0; BLOCK_LEN];
    out[11] = max_p;
    out[12] = std;
    let Some(big) = regions.first() else { return out };
    let tumor_area: usize = regions.iter().map(Vec::len).sum();
    let p_sum: f64 = regions.iter().flatten().map(|&(x, y)| vals[y * w + x]).sum();

    let k = big.len() as i128;
    let sum = |f: &dyn Fn(i128, i128) -> i128| big.iter().map(|&(x, y)| f(x as i128, y as i128)).sum::<i128>();
    let (sx, sy) = (sum(&|x, _| x), sum(&|_, y| y));
    let var = |s2: i128, a: i128, b: i128| (k * s2 - a * b) as f64 / (k * k) as f64;
    let cxx = var(sum(&|x, _| x * x), sx, sx) + 1.0 / 12.0;
    let cyy = var(sum(&|_, y| y * y), sy, sy) + 1.0 / 12.0;
    let cxy = var(sum(&|x, y| x * y), sx, sy);
    let disc = (((cxx - cyy) / 2.0).powi(2) + cxy * cxy).sqrt();
    let l1 = (cxx + cyy) / 2.0 + disc;
    let l2 = ((cxx + cyy) / 2.0 - disc).max(0.0);

    let xs = big.iter().map(|c| c.0);
    let ys = big.iter().map(|c| c.1);
    let bbox = (xs.clone().min().unwrap(), ys.clone().min().unwrap(), xs.max().unwrap(), ys.max().unwrap());
    let (bw, bh) = (bbox.2 - bbox.0 + 1, bbox.3 - bbox.1 + 1);
    let centers: Vec<(f64, f64)> = big.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let member = |x: isize, y: isize| x >= 0 && y >= 0 && big.contains(&(x as usize, y as usize));
    let perimeter: usize = big
        .iter()
        .map(|&(x, y)| {
            [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .filter(|(dx, dy)| !member(x as isize + dx, y as isize + dy))
                .count()
        })
        .sum();

    out[0] = regions.len() as f64;
    out[1] = tumor_area as f64;
    out[2] = tumor_area as f64 / n;
    out[3] = big.len() as f64;
    out[4] = tumor_area as f64 / regions.len() as f64;
    out[5] = 4.0 * l1.sqrt();
    out[6] = if l1 > 0.0 { (1.0 - l2 / l1).max(0.0).sqrt() } else { 0.0 };
    out[7] = big.len() as f64 / (bw * bh) as f64;
    out[8] = big.len() as f64 / convex_cell_count(centers, bbox) as f64;
    out[9] = perimeter as f64;
    out[10] = p_sum / tumor_area as f64;
    out[13] = big.iter().map(|&(x, y)| vals[y * w + x]).sum::<f64>() / big.len() as f64;
    out
}

/// Smooth random blobs plus noise, with a random unscored margin.
fn random_heatmap(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(0..6))
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(1.0..6.0),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let unscored = rng.gen_range(0.0..0.3);
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            if rng.gen_bool(unscored) {
                return -1.0;
            }
            let mut p: f64 = rng.gen_range(0.0..0.3);
            for &(bx, by, r, peak) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                p = p.max(peak * (-d2 / (2.0 * r * r)).exp());
            }
            // Snap some values onto the thresholds to exercise strictness.
            if rng.gen_bool(0.05) {
                p = if rng.gen_bool(0.5) { 0.5 } else { 0.9 };
            }
            p.clamp(0.0, 1.0)
        })
        .collect()
}

fn criterion_features() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = FeatureConfig::default();
    let mut worst: f64 = 0.0;
    for case in 0..FEATURE_CASES {
        let vals = random_heatmap(&mut rng, 32, 32);
        if vals.iter().all(|&v| v < 0.0) {
            continue;
        }
        let hm = heatmap_of(32, 32, vals.clone());
        let fv = extract_features(&hm, hm.scored_count(), &cfg).map_err(|e| e.to_string())?;
        check(fv.values.len() == FEATURE_COUNT, || format!("case {case}: {} slots", fv.values.len()))?;
        let mut want = oracle_block(32, 32, &vals, cfg.t_low);
        want.extend(oracle_block(32, 32, &vals, cfg.t_high));
        for (slot, (g, e)) in fv.values.iter().zip(&want).enumerate() {
            let d = (g - e).abs();
            worst = worst.max(d);
            check(d <= FEATURE_TOLERANCE, || format!("case {case} slot {slot}: {g} vs oracle {e}"))?;
        }
        check(fv.values[BLOCK_LEN + 1] <= fv.values[1], || {
            format!("case {case}: t=0.9 area {} exceeds t=0.5 area {}", fv.values[BLOCK_LEN + 1], fv.values[1])
        })?;
    }
    Ok(format!("{FEATURE_CASES} heatmaps, 28 slots each, max |Δ| {worst:e}"))
}

// ---------------------------------------------------------------------------
// 6. Random forest

fn reference_cart(x: &[Vec<f64>], y: &[bool], idx: &[usize], out: &mut Vec<Node>) {
    let n = idx.len() as f64;
    let tumor = idx.iter().filter(|&&i| y[i]).count() as f64;
    if tumor == 0.0 || tumor == n {
        out.push(Node::Leaf { p_tumor: tumor / n });
        return;
    }
    let gini = |ids: &[usize]| {
        let m = ids.len() as f64;
        let t = ids.iter().filter(|&&i| y[i]).count() as f64;
        1.0 - (t / m).powi(2) - ((m - t) / m).powi(2)
    };
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = idx.iter().map(|&i| x[i][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= thr);
            let cost = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / n;
            if best.map_or(true, |(c, _, _)| cost < c - 1e-12) {
                best = Some((cost, f, thr));
            }
        }
    }
    let Some((_, f, thr)) = best else {
        out.push(Node::Leaf { p_tumor: tumor / n });
        return;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][f] <= thr);
    let at = out.len();
    out.push(Node::Split { feature: f, threshold: thr, right: 0 });
    reference_cart(x, y, &l, out);
    let right = out.len();
    out[at] = Node::Split { feature: f, threshold: thr, right };
    reference_cart(x, y, &r, out);
}

fn criterion_forest() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y): (Vec<Vec<f64>>, Vec<bool>) = (0..200)
        .map(|i| {
            let tumor = i % 2 == 0;
            let c = if tumor { 1.5 } else { -1.5 };
            (vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)], tumor)
        })
        .unzip();
    let cfg = ForestConfig { seed: 7, ..ForestConfig::default() };
    let model = train_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let oob = model.oob_error.ok_or("no out-of-bag estimate")?;
    check(oob <= OOB_LIMIT, || format!("OOB error {oob}"))?;

    let again = train_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let text = |m| forest_to_text(&ForestFile { feature_names: vec!["a".into(), "b".into()], model: m });
    check(again == model && text(again.clone()) == text(model.clone()), || "same-seed retrain differs".into())?;

    for seed in 0..10 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + seed);
        let xs: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| r.gen_range(0..12) as f64 / 3.0).collect()).collect();
        let ys: Vec<bool> = xs.iter().map(|v| v[0] - v[2] > 0.5 || r.gen_bool(0.1)).collect();
        let single = ForestConfig { n_trees: 1, bootstrap: false, mtry: Some(3), seed, ..ForestConfig::default() };
        let m = train_forest(&xs, &ys, &single).map_err(|e| e.to_string())?;
        let mut want = Vec::new();
        reference_cart(&xs, &ys, &(0..xs.len()).collect::<Vec<_>>(), &mut want);
        check(m.trees[0].nodes == want, || format!("single tree (seed {seed}) differs from reference CART"))?;
    }
    Ok(format!("OOB error {oob:.4}, retrain bit-identical, 10 single trees equal reference CART"))
}

// ---------------------------------------------------------------------------
// 7–9. Synthetic end to end

fn e2e_config(dataset: &Path, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig { seed: Some(2024), worker_count: 2, ..PipelineConfig::default() };
    cfg.paths.dataset = Some(dataset.join("dataset.csv"));
    cfg.paths.output = Some(out.to_path_buf());
    cfg.synth.total_slides = E2E_SLIDES;
    cfg.synth.lesions_per_tumor_slide = (1, 4);
    cfg.synth.lesion_radius = (256.0, 400.0);
    cfg.synth.lesion_gap = 384.0;
    cfg.sampler.tumor_per_slide = 60;
    cfg.sampler.normal_per_tumor_slide = 30;
    cfg.sampler.normal_per_normal_slide = 30;
    cfg
}

struct EndToEnd {
    report: RunReport,
    elapsed: Duration,
}

fn run_end_to_end(root: &Path) -> Result<EndToEnd, String> {
    let start = Instant::now();
    let data = root.join("data");
    let cfg = e2e_config(&data, &root.join("run1"));
    let counts = cfg.synth.dataset_counts();
    let params = GenerateParams {
        synth: cfg.synth.to_core(cfg.seed.unwrap_or(0)),
        counts,
        tile_size: cfg.synth.tile_size,
        tissue_truth: Some(cfg.roi.to_core()),
    };
    let rows = generate_dataset(&params, cfg.seed.unwrap_or(0), &data).map_err(|e| e.to_string())?;
    if rows.len() != E2E_SLIDES {
        return Err(format!("{} slides generated", rows.len()));
    }
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    Ok(EndToEnd { report, elapsed: start.elapsed() })
}

fn criterion_end_to_end(e2e: &Result<EndToEnd, String>) -> Outcome {
    let e = e2e.as_ref().map_err(Clone::clone)?;
    let test = e.report.test.as_ref().ok_or("report has no test split")?;
    let auc = test.auc.ok_or("test split has a single class")?;
    let froc = test.froc.as_ref().ok_or("test split has no lesions")?.score;
    let c = wsi_core::synth::DatasetCounts::mirror(E2E_SLIDES);
    let s = &e.report.slides;
    check((s.train, s.val, s.test) == (c.train.0 + c.train.1, c.val.0 + c.val.1, c.test.0 + c.test.1), || {
        format!("split sizes {}/{}/{}", s.train, s.val, s.test)
    })?;
    check(auc >= E2E_MIN_AUC, || format!("test AUC {auc}"))?;
    check(froc >= E2E_MIN_FROC, || format!("test FROC score {froc}"))?;
    check(e.elapsed < E2E_BUDGET, || format!("took {:?}", e.elapsed))?;
    Ok(format!("48 slides, test AUC {auc:.4}, FROC {froc:.4}, {:.1?} including synthesis", e.elapsed))
}

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_determinism(root: &Path, e2e: &Result<EndToEnd, String>) -> Outcome {
    e2e.as_ref().map_err(|e| format!("first run failed: {e}"))?;
    let (run1, run2) = (root.join("run1"), root.join("run2"));
    let cfg = e2e_config(&root.join("data"), &run2);
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let files = files_under(&run1);
    check(files == files_under(&run2), || "runs produced different file sets".into())?;
    let heatmaps = files.iter().filter(|f| f.starts_with("heatmaps")).count();
    check(heatmaps == E2E_SLIDES, || format!("{heatmaps} heatmap files"))?;
    for f in &files {
        let (a, b) = (fs::read(run1.join(f)), fs::read(run2.join(f)));
        check(matches!((&a, &b), (Ok(x), Ok(y)) if x == y), || format!("{} differs", f.display()))?;
    }
    check(files.iter().any(|f| f == Path::new(REPORT_FILE)), || "no report written".into())?;
    Ok(format!("{} files byte-identical across runs, including report and {heatmaps} heatmaps", files.len()))
}

fn criterion_tissue(root: &Path, e2e: &Result<EndToEnd, String>) -> Outcome {
    e2e.as_ref().map_err(|e| format!("pipeline run failed: {e}"))?;
    let mut worst = f64::INFINITY;
    for i in 0..JACCARD_SLIDES {
        let id = format!("slide_{i:03}");
        let mask = read_mask(&root.join("run1").join("masks").join(format!("{id}.png"))).map_err(|e| e.to_string())?;
        let truth = read_mask(&tissue_truth_path(&root.join("data"), &id)).map_err(|e| e.to_string())?;
        let (m, t) = (mask.grid.cells(), truth.grid.cells());
        check(m.len() == t.len(), || format!("{id}: mask and truth sizes differ"))?;
        let inter = m.iter().zip(t).filter(|(a, b)| **a && **b).count();
        let union = m.iter().zip(t).filter(|(a, b)| **a || **b).count();
        let j = inter as f64 / union as f64;
        worst = worst.min(j);
        check(j >= JACCARD_MIN, || format!("{id}: Jaccard {j:.4}"))?;
    }
    Ok(format!("{JACCARD_SLIDES} slides, minimum Jaccard {worst:.4}"))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "otsu oracle", criterion_otsu()),
        (2, "auc oracle", criterion_auc()),
        (3, "froc oracle", criterion_froc()),
        (4, "region properties", criterion_regionprops()),
        (5, "feature schema", criterion_features()),
        (6, "random forest", criterion_forest()),
    ];
    let e2e = run_end_to_end(root.path());
    results.push((7, "synthetic end to end", criterion_end_to_end(&e2e)));
    results.push((8, "determinism", criterion_determinism(root.path(), &e2e)));
    results.push((9, "tissue mask quality", criterion_tissue(root.path(), &e2e)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
