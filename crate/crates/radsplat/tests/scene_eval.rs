//! Synthetic scenes and the evaluation harness, probed with finite
//! differences, gradient scans, and large-sample statistics.

mod common;

use common::{default_range, random_coordinates, rng};

use radsplat::eval::{
    benchmark, detection_mask, evaluate_method, generate_scene, grid_errors, grid_errors_masked,
    sample_scan, write_eval_csv, BenchConfig, PATCH_DEPTH_RANGE_M,
};
use radsplat::geometry::AngularCoordinate;
use radsplat::gp::GpFitConfig;
use radsplat::localized::{fit_localized, Execution, RegionPartition};
use radsplat::pointcloud::{rasterize_depth_field, DepthRaster};

#[test]
fn base_field_respects_its_curvature_bound() {
    let range = default_range();
    let scene = generate_scene(&range, 0, 17, 0.0);
    let bound = scene.smooth_curvature_bound();
    assert!(bound > 0.0);

    let h = 1e-3;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let directions = [(1.0, 0.0), (0.0, 1.0), (inv_sqrt2, inv_sqrt2)];
    let mut r = rng(18);
    for x in random_coordinates(&range, 200, &mut r) {
        for (ua, ue) in directions {
            let at = |t: f64| {
                let c = AngularCoordinate::new(x.azimuth() + t * ua, x.elevation() + t * ue)
                    .expect("probe stays within angular limits");
                scene.base_depth(&c)
            };
            let second = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
            assert!(
                second.abs() <= bound * 1.001 + 1e-6,
                "second derivative {second} exceeds the advertised bound {bound}"
            );
        }
    }
}

#[test]
fn patches_override_base_with_strong_contrast() {
    let range = default_range();
    for seed in [0u64, 1, 2] {
        let scene = generate_scene(&range, 3, seed, 0.0);
        let patches = scene.patches();
        assert_eq!(patches.len(), 3);
        for (i, p) in patches.iter().enumerate() {
            assert!(p.azimuth_min >= range.azimuth_min() && p.azimuth_max <= range.azimuth_max());
            assert!(
                p.elevation_min >= range.elevation_min()
                    && p.elevation_max <= range.elevation_max()
            );
            assert!(p.azimuth_min < p.azimuth_max && p.elevation_min < p.elevation_max);
            assert!(p.depth_m >= PATCH_DEPTH_RANGE_M.0 && p.depth_m <= PATCH_DEPTH_RANGE_M.1);

            let center = AngularCoordinate::new(
                0.5 * (p.azimuth_min + p.azimuth_max),
                0.5 * (p.elevation_min + p.elevation_max),
            )
            .unwrap();
            // Later patches paint over earlier ones, so the depth at this
            // center belongs to the last patch covering it.
            let winner = patches[i..]
                .iter()
                .rev()
                .find(|q| {
                    (q.azimuth_min..=q.azimuth_max).contains(&center.azimuth())
                        && (q.elevation_min..=q.elevation_max).contains(&center.elevation())
                })
                .expect("a patch always covers its own center");
            assert_eq!(
                scene.truth(&center),
                winner.depth_m,
                "patch {i}'s center must show the topmost covering patch"
            );
            assert!(
                (p.depth_m - scene.base_depth(&center)).abs() >= 20.0 - 1e-9,
                "patch {i} lacks contrast against the base"
            );
            for (j, other) in patches.iter().enumerate().skip(i + 1) {
                assert!(
                    (p.depth_m - other.depth_m).abs() >= 1.0 - 1e-9,
                    "patches {i} and {j} have confusable depths"
                );
            }
        }
    }
}

#[test]
fn truth_raster_matches_pointwise_truth() {
    let range = default_range();
    let scene = generate_scene(&range, 4, 8, 0.0);
    let raster = scene.truth_raster(90, 20);
    for row in 0..20 {
        for col in 0..90 {
            let center = DepthRaster::cell_center(&range, 90, 20, row, col);
            assert_eq!(
                raster.value(row, col).to_bits(),
                scene.truth(&center).to_bits()
            );
        }
    }
}

#[test]
fn azimuth_gradient_scan_locates_patch_edges() {
    let range = default_range();
    let scene = generate_scene(&range, 1, 37, 0.0);
    let patch = scene.patches()[0];
    let (width, height) = (360usize, 80usize);
    let raster = scene.truth_raster(width, height);

    // Column pairs whose worst row-wise jump is patch-sized.
    let mut detected: Vec<usize> = Vec::new();
    for col in 0..width - 1 {
        let mut gap = 0f64;
        for row in 0..height {
            gap = gap.max((raster.value(row, col + 1) - raster.value(row, col)).abs());
        }
        if gap > 10.0 {
            detected.push(col);
        }
    }

    let step = range.azimuth_span() / width as f64;
    assert_eq!(
        detected.len(),
        2,
        "a single rectangle jumps along azimuth exactly at its two edges"
    );
    for (col, edge) in detected.iter().zip([patch.azimuth_min, patch.azimuth_max]) {
        // The boundary between columns col and col+1.
        let boundary = range.azimuth_min() + (col + 1) as f64 * step;
        assert!(
            (boundary - edge).abs() <= step,
            "detected boundary {boundary} is more than one cell from edge {edge}"
        );
    }
}

#[test]
fn scan_noise_matches_the_configured_level() {
    let range = default_range();
    let noise_std = 0.3;
    let scene = generate_scene(&range, 0, 53, noise_std);
    let count = 100_000;
    let scan = sample_scan(&scene, count, 77);
    assert_eq!(scan.len(), count);

    let residuals: Vec<f64> = scan
        .records()
        .iter()
        .map(|r| r.depth_m - scene.truth(&r.location))
        .collect();
    let n = count as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let variance = residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    let std = variance.sqrt();

    assert!(
        mean.abs() <= 5.0 * noise_std / n.sqrt(),
        "noise mean {mean} too far from zero"
    );
    assert!(
        (std - noise_std).abs() <= 0.05 * noise_std,
        "noise std {std} strays more than 5% from {noise_std}"
    );
}

#[test]
fn noiseless_scans_reproduce_truth_exactly() {
    let range = default_range();
    let scene = generate_scene(&range, 3, 29, 0.0);
    let scan = sample_scan(&scene, 5000, 30);
    for record in scan.records() {
        assert_eq!(
            record.depth_m.to_bits(),
            scene.truth(&record.location).to_bits(),
            "zero noise must mean verbatim truth"
        );
    }
}

#[test]
fn mae_detects_a_constant_shift_exactly() {
    let range = default_range();
    let scene = generate_scene(&range, 2, 12, 0.0);
    let truth = scene.truth_raster(180, 40);
    // 0.25 is a power of two, so every shifted cell differs by exactly it.
    let shifted: Vec<f64> = truth.values().iter().map(|v| v + 0.25).collect();
    let shifted = DepthRaster::from_values(*truth.range(), 180, 40, shifted);
    let metrics = grid_errors(&shifted, &truth).unwrap();
    assert_eq!(metrics.mae, 0.25);
    assert_eq!(metrics.rmse, 0.25);

    let perfect = grid_errors(&truth, &truth).unwrap();
    assert_eq!(perfect.mae, 0.0);
    assert_eq!(perfect.rmse, 0.0);
}

#[test]
fn dense_noiseless_fit_interpolates_below_a_decimeter() {
    let range = default_range();
    let scene = generate_scene(&range, 0, 5, 0.0);
    let scan = sample_scan(&scene, 2500, 6);
    let mut gp = GpFitConfig::default();
    gp.lengthscale_bounds = (0.02, 2.0);
    let model = fit_localized(
        &scan,
        RegionPartition::new(range, 4, 3).unwrap(),
        &gp,
        1e-4,
        Execution::Sequential,
    )
    .unwrap();
    let (mean, _) = rasterize_depth_field(&model, &range, 180, 40, Execution::Sequential).unwrap();
    let truth = scene.truth_raster(180, 40);
    let metrics = grid_errors(&mean, &truth).unwrap();
    assert!(
        metrics.mae <= 0.1,
        "dense noiseless reconstruction should near-interpolate, MAE {}",
        metrics.mae
    );
}

#[test]
fn detection_mask_marks_observed_cells() {
    let range = default_range();
    let scene = generate_scene(&range, 2, 3, 0.3);
    let scan = sample_scan(&scene, 400, 4);
    let (width, height) = (90usize, 20usize);
    let mask = detection_mask(&scan, &range, width, height);
    assert_eq!(mask.len(), width * height);
    assert!(mask.iter().any(|&m| m), "a non-empty scan marks cells");
    assert!(!mask.iter().all(|&m| m), "400 records cannot cover 1800 cells");

    for record in scan.records() {
        let col = (((record.location.azimuth() - range.azimuth_min()) / range.azimuth_span()
            * width as f64)
            .floor() as usize)
            .min(width - 1);
        let row = (((record.location.elevation() - range.elevation_min())
            / range.elevation_span()
            * height as f64)
            .floor() as usize)
            .min(height - 1);
        assert!(mask[row * width + col], "observed cell must be masked");
    }

    // An all-true mask reduces masked errors to the plain grid errors.
    let truth = scene.truth_raster(width, height);
    let shifted: Vec<f64> = truth.values().iter().map(|v| v + 1.0).collect();
    let shifted = DepthRaster::from_values(*truth.range(), width, height, shifted);
    let full = grid_errors(&shifted, &truth).unwrap();
    let all_true = vec![true; width * height];
    let masked = grid_errors_masked(&shifted, &truth, &all_true).unwrap();
    assert_eq!(full.mae.to_bits(), masked.mae.to_bits());
    assert_eq!(full.rmse.to_bits(), masked.rmse.to_bits());
}

#[test]
fn bench_with_one_size_and_no_partitions_writes_one_row() {
    let mut gp = GpFitConfig::default();
    gp.lengthscale_grid_points = 4;
    let cfg = BenchConfig {
        gp,
        scan_sizes: vec![80],
        partitions: Vec::new(),
        repetitions: 3,
        queries: 100,
        seed: 3,
        noise_variance: 0.09,
        parallel: false,
    };
    let table = benchmark(&default_range(), &cfg).unwrap();
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0];
    assert_eq!(row.method, "conventional");
    assert_eq!(row.observations, 80);
    assert!(row.fit_seconds >= 0.0 && row.predict_seconds >= 0.0);
    assert!(
        (row.total_seconds - (row.fit_seconds + row.predict_seconds)).abs()
            <= row.total_seconds.max(1e-9),
        "total close to fit plus predict"
    );

    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "config echo, header, and exactly one row");
    assert!(lines[0].starts_with("# "), "first line echoes the config");
    assert_eq!(
        lines[1],
        "method,observations,regions,execution,fit_seconds,predict_seconds,total_seconds"
    );
    assert!(lines[2].starts_with("conventional,80,1,single,"));
}

#[test]
fn eval_csv_keeps_commas_out_of_the_config_echo() {
    let range = default_range();
    let scene = generate_scene(&range, 0, 1, 0.0);
    let truth = scene.truth_raster(30, 10);
    let report =
        evaluate_method("demo", &truth, &truth, 0.5, 0.25, "alpha=1,beta=2").unwrap();
    assert_eq!(report.mae, 0.0);
    assert_eq!(report.config, "alpha=1;beta=2");

    let mut buf = Vec::new();
    write_eval_csv(&[report], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "method,mae_m,rmse_m,fit_seconds,predict_seconds,config");
    assert_eq!(lines[1].split(',').count(), 6, "config cell must stay one cell");
}
