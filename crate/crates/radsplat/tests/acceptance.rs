//! The shipping gate: one test per release criterion. Every test prints a
//! single `ACCEPTANCE <n> <PASS|FAIL> <name>: <metrics> (<time>)` line
//! before asserting, so `cargo test --test acceptance -- --show-output`
//! reads as a scoreboard even when a gate fails. Tolerances are stated in
//! each line next to the measured value.

mod common;

use std::fs;
use std::process::Command;
use std::time::Instant;

use common::{
    brute_force_render, default_range, density_oracle, eigenvalues_2x2, max_channel_gap,
    naive_predict, noisy_scan, random_camera, random_coordinates, random_primitive,
    random_sorted_splats, rng,
};
use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use radsplat::eval::{
    benchmark, compare_methods, generate_scene, sample_scan, BenchConfig, ComparisonConfig,
};
use radsplat::geometry::Point3;
use radsplat::gp::{GpDataset, GpFitConfig, GpPosterior};
use radsplat::kernel::RbfKernel;
use radsplat::localized::{fit_conventional, fit_localized, Execution, RegionPartition};
use radsplat::pointcloud::ply::{export_ply, import_ply, PlyEncoding};
use radsplat::pointcloud::{export_scan, CloudPoint, PointCloud, ScanFormat, SparseDepthScan};
use radsplat::splat::{
    evaluate_gaussian, jacobian_check, project_gaussian, render_image, render_pixel, CameraModel,
    GaussianPrimitive, ProjectedGaussian,
};

struct Criterion {
    number: usize,
    name: &'static str,
    budget_seconds: f64,
    start: Instant,
}

fn criterion(number: usize, name: &'static str, budget_seconds: f64) -> Criterion {
    Criterion {
        number,
        name,
        budget_seconds,
        start: Instant::now(),
    }
}

impl Criterion {
    /// Prints the scoreboard line first, then enforces the value gate and
    /// the wall-clock budget.
    fn finish(self, pass: bool, metrics: String) {
        let elapsed = self.start.elapsed().as_secs_f64();
        let timely = elapsed < self.budget_seconds;
        let verdict = if pass && timely { "PASS" } else { "FAIL" };
        println!(
            "ACCEPTANCE {} {} {}: {} ({:.2}s of {:.0}s budget)",
            self.number, verdict, self.name, metrics, elapsed, self.budget_seconds
        );
        assert!(pass, "criterion {} failed: {}", self.number, metrics);
        assert!(
            timely,
            "criterion {} overran its budget: {:.2}s of {:.0}s",
            self.number, elapsed, self.budget_seconds
        );
    }
}

/// 1. Exact GP posterior matches a brute-force explicit matrix inverse on
/// 20 seeded small instances, within 1e-8 absolute on mean and variance.
#[test]
fn criterion_1_exact_gp_matches_explicit_inversion() {
    let c = criterion(1, "exact GP vs explicit inversion", 5.0);
    let range = default_range();
    let mut worst = 0f64;
    for seed in 0..20u64 {
        let t = 5 + ((seed as usize * 7) % 36);
        let mut r = rng(seed);
        let inputs = random_coordinates(&range, t, &mut r);
        let noise_variance = 0.05 + 0.01 * (seed % 5) as f64;
        let signal_variance = 1.0 + 0.8 * (seed % 3) as f64;
        let lengthscale = 0.05 + 0.02 * (seed % 7) as f64;
        let targets: Vec<f64> = inputs
            .iter()
            .map(|x| {
                18.0 + 3.0 * (2.0 * x.azimuth()).sin()
                    + 1.5 * (2.5 * x.elevation()).cos()
                    + r.random_range(-0.3..0.3)
            })
            .collect();

        let kernel = RbfKernel::new(signal_variance, lengthscale).unwrap();
        let dataset = GpDataset::new(inputs.clone(), targets.clone(), noise_variance).unwrap();
        let posterior = GpPosterior::fit(dataset, kernel).unwrap();
        for q in random_coordinates(&range, 25, &mut r) {
            let (mean, variance) = posterior.predict(&q);
            let (oracle_mean, oracle_variance) =
                naive_predict(&inputs, &targets, noise_variance, signal_variance, lengthscale, &q);
            worst = worst
                .max((mean - oracle_mean).abs())
                .max((variance - oracle_variance).abs());
        }
    }
    c.finish(
        worst <= 1e-8,
        format!("max |gap| {worst:.3e} over 20 instances x 25 queries, tolerance 1e-8"),
    );
}

/// 2. A one-region partition collapses to the conventional whole-scan GP,
/// within 1e-10 on 1000 queries for each of 5 seeded scans.
#[test]
fn criterion_2_single_region_collapses_to_conventional() {
    let c = criterion(2, "single-region localized vs conventional", 10.0);
    let range = default_range();
    let gp = GpFitConfig::default();
    let mut worst = 0f64;
    for seed in 0..5u64 {
        let scan = noisy_scan(200 + seed, 180);
        let conventional = fit_conventional(&scan, &gp, 0.09).unwrap();
        let partition = RegionPartition::new(range, 1, 1).unwrap();
        let localized = fit_localized(&scan, partition, &gp, 0.09, Execution::Sequential).unwrap();
        for q in random_coordinates(&range, 1000, &mut rng(900 + seed)) {
            let (mean, variance) = conventional.posterior.predict(&q);
            let local = localized.predict_local(&q).unwrap();
            worst = worst
                .max((mean - local.mean).abs())
                .max((variance - local.variance).abs());
        }
    }
    c.finish(
        worst <= 1e-10,
        format!("max |gap| {worst:.3e} over 5 scans x 1000 queries, tolerance 1e-10"),
    );
}

/// 3. Perturbing a single observation moves predictions only inside its
/// own region; every query outside stays bitwise identical. 5 seeds, all
/// 12 regions of a 4x3 partition.
#[test]
fn criterion_3_perturbation_stays_inside_its_region() {
    let c = criterion(3, "observation locality across regions", 30.0);
    let range = default_range();
    let gp = GpFitConfig::default();
    let mut checked = 0usize;
    let mut leaked = 0usize;
    let mut inert = 0usize;
    for seed in 0..5u64 {
        let scan = noisy_scan(300 + seed, 360);
        let partition = RegionPartition::new(range, 4, 3).unwrap();
        let base =
            fit_localized(&scan, partition.clone(), &gp, 0.09, Execution::Sequential).unwrap();
        let queries = random_coordinates(&range, 400, &mut rng(950 + seed));
        let before: Vec<(f64, f64)> = queries
            .iter()
            .map(|q| {
                let p = base.predict_local(q).unwrap();
                (p.mean, p.variance)
            })
            .collect();

        for region in 0..partition.region_count() {
            let index = scan
                .records()
                .iter()
                .position(|rec| partition.assign(&rec.location).unwrap() == region)
                .expect("360 observations cover every region");
            let mut records = scan.records().to_vec();
            records[index].depth_m += 0.3;
            let perturbed = SparseDepthScan::new(records, None, None);
            let model =
                fit_localized(&perturbed, partition.clone(), &gp, 0.09, Execution::Sequential)
                    .unwrap();

            let mut inside_changed = false;
            for (q, (mean0, variance0)) in queries.iter().zip(&before) {
                let after = model.predict_local(q).unwrap();
                if partition.assign(q).unwrap() == region {
                    inside_changed |= after.mean != *mean0;
                } else if after.mean.to_bits() != mean0.to_bits()
                    || after.variance.to_bits() != variance0.to_bits()
                {
                    leaked += 1;
                }
            }
            if !inside_changed {
                inert += 1;
            }
            checked += 1;
        }
    }
    c.finish(
        checked == 60 && leaked == 0 && inert == 0,
        format!(
            "{checked}/60 single-observation perturbations, {leaked} outside-region leaks \
             (gate 0, bitwise), {inert} inert perturbations (gate 0)"
        ),
    );
}

/// 4. At T = 2000 over 12 regions, localized fit+predict on 7200 queries
/// beats the conventional GP by >= 4x sequentially and >= 6x with parallel
/// regions. Ratios of median wall-clock totals over 3 repetitions.
#[test]
fn criterion_4_localized_speedup_over_conventional() {
    let c = criterion(4, "localized speedup at 2000 observations", 180.0);
    let mut gp = GpFitConfig::default();
    gp.lengthscale_grid_points = 4;
    let cfg = BenchConfig {
        gp,
        scan_sizes: vec![2000],
        partitions: vec![(4, 3)],
        repetitions: 3,
        queries: 7200,
        seed: 7,
        noise_variance: 0.09,
        parallel: true,
    };
    let table = benchmark(&default_range(), &cfg).unwrap();
    let total = |method: &str, execution: &str| {
        table
            .rows
            .iter()
            .find(|r| r.method == method && r.execution == execution)
            .map(|r| r.total_seconds)
            .expect("benchmark emits the requested row")
    };
    let conventional = total("conventional", "single");
    let sequential_ratio = conventional / total("localized", "single");
    let parallel_ratio = conventional / total("localized", "parallel");
    c.finish(
        sequential_ratio >= 4.0 && parallel_ratio >= 6.0,
        format!(
            "sequential {sequential_ratio:.1}x (gate 4x), parallel {parallel_ratio:.1}x \
             (gate 6x), conventional total {conventional:.2}s"
        ),
    );
}

/// 5. On 10 seeded piecewise scenes (5 patches, 500 observations, 0.3 m
/// noise), the localized model's MAE is at or below the conventional MAE
/// in at least 8 scenes, with mean relative improvement >= 5%.
#[test]
fn criterion_5_localized_accuracy_on_piecewise_scenes() {
    let c = criterion(5, "accuracy direction on piecewise scenes", 300.0);
    let range = default_range();
    let cfg = ComparisonConfig::default();
    let mut wins = 0usize;
    let mut improvement_sum = 0f64;
    for seed in 0..10u64 {
        let scene = generate_scene(&range, 5, seed, 0.3);
        let scan = sample_scan(&scene, 500, seed + 1);
        let (conventional, localized) = compare_methods(&scene, &scan, &cfg).unwrap();
        let (conventional_mae, localized_mae) =
            (conventional.report.mae, localized.report.mae);
        if localized_mae <= conventional_mae {
            wins += 1;
        }
        improvement_sum += (conventional_mae - localized_mae) / conventional_mae;
    }
    let mean_improvement = improvement_sum / 10.0;
    c.finish(
        wins >= 8 && mean_improvement >= 0.05,
        format!(
            "localized won {wins}/10 scenes (gate 8), mean relative MAE improvement \
             {:.1}% (gate 5%)",
            100.0 * mean_improvement
        ),
    );
}

/// 6. Splat math: (a) peak density equals opacity to 1e-12 on 1e4
/// primitives; (b) projected covariance eigenvalues >= -1e-9 on 1e4
/// visible pairs; (c) projection Jacobian matches central differences to
/// 1e-4 on 100 cases; (d) 32x32 renders match a cutoff-free reference
/// within 2/255 per channel on 5 seeded scenes.
#[test]
fn criterion_6_splat_projection_and_render_math() {
    let c = criterion(6, "splat identities and reference renders", 60.0);
    let mut r = rng(600);

    let mut peak_gap = 0f64;
    for _ in 0..10_000 {
        let g = random_primitive(&mut r);
        peak_gap = peak_gap.max((evaluate_gaussian(&g, &g.mean()) - g.opacity()).abs());
    }

    let mut min_eigenvalue = f64::INFINITY;
    let mut projected = 0usize;
    while projected < 10_000 {
        let g = random_primitive(&mut r);
        let cam = random_camera(&mut r, 64, 64);
        if cam.world_to_camera(&g.mean()).z < 0.5 {
            continue;
        }
        let s = project_gaussian(&g, &cam).expect("point ahead of the near plane projects");
        min_eigenvalue = min_eigenvalue.min(eigenvalues_2x2(&s.cov2d).0);
        projected += 1;
    }

    let mut jacobian_gap = 0f64;
    let mut cases = 0usize;
    while cases < 100 {
        let g = random_primitive(&mut r);
        let cam = random_camera(&mut r, 64, 64);
        let depth = cam.world_to_camera(&g.mean()).z;
        if depth < 0.5 {
            continue;
        }
        jacobian_gap = jacobian_gap.max(jacobian_check(&g, &cam, 1e-4 * depth).unwrap());
        cases += 1;
    }

    let mut render_gap = 0f64;
    for seed in 10..15u64 {
        let mut r = rng(seed);
        let primitives: Vec<GaussianPrimitive> =
            (0..30).map(|_| random_primitive(&mut r)).collect();
        let cam = CameraModel::identity_pose(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        let image = render_image(&primitives, &cam);
        let reference = brute_force_render(&primitives, &cam);
        render_gap = render_gap.max(max_channel_gap(image.pixels(), &reference));
    }

    let pass = peak_gap <= 1e-12
        && min_eigenvalue >= -1e-9
        && jacobian_gap <= 1e-4
        && render_gap <= 2.0 / 255.0;
    c.finish(
        pass,
        format!(
            "peak gap {peak_gap:.2e} (1e-12), min projected eigenvalue {min_eigenvalue:.2e} \
             (-1e-9), jacobian gap {jacobian_gap:.2e} (1e-4), render gap {render_gap:.5} (2/255)"
        ),
    );
}

/// 7. Compositing invariants over 1e4 random sorted splat lists:
/// transmittance prefixes never increase, a zero-opacity insertion is a
/// bitwise no-op, and output channels stay inside the unit interval
/// (1e-12 slack for float accumulation).
#[test]
fn criterion_7_compositing_invariants() {
    let c = criterion(7, "compositing order, bounds, and no-op invariants", 30.0);
    let mut r = rng(700);
    let mut monotone_breaks = 0usize;
    let mut noop_breaks = 0usize;
    let mut min_channel = f64::INFINITY;
    let mut max_channel = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let splats = random_sorted_splats(&mut r, 12);
        let p = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];

        let mut transmittance = 1.0f64;
        for s in &splats {
            let next = transmittance * (1.0 - density_oracle(s, p));
            if next > transmittance {
                monotone_breaks += 1;
            }
            transmittance = next;
        }

        let color = render_pixel(&splats, p);
        for channel in color {
            min_channel = min_channel.min(channel);
            max_channel = max_channel.max(channel);
        }

        let slot = r.random_range(0..=splats.len());
        let ghost_depth = if splats.is_empty() {
            1.0
        } else if slot == 0 {
            splats[0].view_depth
        } else {
            splats[slot - 1].view_depth
        };
        let ghost = ProjectedGaussian {
            mean2d: Vector2::new(p[0], p[1]),
            cov2d: Matrix2::identity(),
            view_depth: ghost_depth,
            opacity: 0.0,
            color: [0.7, 0.2, 0.9],
        };
        let mut with_ghost = splats.clone();
        with_ghost.insert(slot, ghost);
        let ghosted = render_pixel(&with_ghost, p);
        if (0..3).any(|i| ghosted[i].to_bits() != color[i].to_bits()) {
            noop_breaks += 1;
        }
    }
    let pass = monotone_breaks == 0
        && noop_breaks == 0
        && min_channel >= 0.0
        && max_channel <= 1.0 + 1e-12;
    c.finish(
        pass,
        format!(
            "1e4 lists: {monotone_breaks} transmittance increases (gate 0), {noop_breaks} \
             zero-opacity non-no-ops (gate 0, bitwise), channels in [{min_channel:.2e}, \
             {max_channel}] (gate [0, 1+1e-12])"
        ),
    );
}

/// 8. PLY export/import identity at float32 precision for cloud sizes
/// 10^0 through 10^6, in both ascii and binary encodings.
#[test]
fn criterion_8_ply_round_trip_to_a_million_points() {
    let c = criterion(8, "PLY round trip across six orders of magnitude", 60.0);
    let sizes = [1usize, 10, 100, 1_000, 10_000, 100_000, 1_000_000];
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for (i, &n) in sizes.iter().enumerate() {
        let mut r = rng(800 + i as u64);
        let points: Vec<CloudPoint> = (0..n)
            .map(|_| CloudPoint {
                position: Point3::new(
                    r.random_range(-100.0..100.0),
                    r.random_range(-100.0..100.0),
                    r.random_range(-100.0..100.0),
                )
                .unwrap(),
                color: [r.random(), r.random(), r.random()],
                confidence: 1.0,
            })
            .collect();
        let cloud = PointCloud::new(points).unwrap();
        for encoding in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let mut buf = Vec::new();
            export_ply(&cloud, &mut buf, encoding).unwrap();
            let back = import_ply(&buf).unwrap();
            assert_eq!(back.len(), cloud.len());
            for (a, b) in cloud.points().iter().zip(back.points()) {
                let same = (a.position.x as f32).to_bits() == (b.position.x as f32).to_bits()
                    && (a.position.y as f32).to_bits() == (b.position.y as f32).to_bits()
                    && (a.position.z as f32).to_bits() == (b.position.z as f32).to_bits()
                    && a.color == b.color
                    && b.confidence == 1.0;
                if !same {
                    mismatches += 1;
                }
                compared += 1;
            }
        }
    }
    c.finish(
        mismatches == 0,
        format!("{compared} point comparisons across 7 sizes x 2 encodings, {mismatches} f32 mismatches (gate 0)"),
    );
}

/// 9. Two invocations of the binary with the same seed produce
/// byte-identical rasters, manifests, and point clouds.
#[test]
fn criterion_9_pipeline_runs_are_byte_reproducible() {
    let c = criterion(9, "seeded end-to-end byte reproducibility", 60.0);
    let tmp = tempfile::tempdir().unwrap();
    let scan = noisy_scan(901, 300);
    let mut buf = Vec::new();
    export_scan(&scan, &mut buf, ScanFormat::Csv).unwrap();
    let scan_path = tmp.path().join("scan.csv");
    fs::write(&scan_path, buf).unwrap();
    let config_path = tmp.path().join("run.toml");
    fs::write(
        &config_path,
        "raster_width = 90\nraster_height = 20\nqueries = 2000\n",
    )
    .unwrap();

    let rerun = |command: &str, dir: &str, outputs: &[&str]| -> (bool, usize) {
        let out_dir = tmp.path().join(dir);
        let args = [
            command,
            "--config",
            config_path.to_str().unwrap(),
            "--scan",
            scan_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "11",
        ];
        let mut identical = true;
        let mut first: Vec<Vec<u8>> = Vec::new();
        for invocation in 0..2 {
            let run = Command::new(env!("CARGO_BIN_EXE_radsplat"))
                .args(args)
                .output()
                .expect("binary launches");
            assert!(
                run.status.success(),
                "{command}: {}",
                String::from_utf8_lossy(&run.stderr)
            );
            let bytes: Vec<Vec<u8>> = outputs
                .iter()
                .map(|name| fs::read(out_dir.join(name)).expect("output exists"))
                .collect();
            if invocation == 0 {
                first = bytes;
            } else {
                identical = bytes == first;
            }
        }
        (identical, outputs.len())
    };

    let (reconstruct_same, reconstruct_files) = rerun(
        "reconstruct",
        "rec",
        &["mean.csv", "variance.csv", "manifest.json"],
    );
    let (pointcloud_same, pointcloud_files) =
        rerun("pointcloud", "pc", &["cloud.ply", "manifest.json"]);
    c.finish(
        reconstruct_same && pointcloud_same,
        format!(
            "reconstruct: {reconstruct_files} files byte-identical across reruns = \
             {reconstruct_same}; pointcloud: {pointcloud_files} files = {pointcloud_same}"
        ),
    );
}
