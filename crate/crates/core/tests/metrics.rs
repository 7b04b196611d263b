use dhformer::metrics::{
    aggregate, fsim, fsim_maps, luma, psnr, ssim, MetricReport, MetricRow, DEFAULT_PSNR_CAP,
};
use dhformer::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn ramp(h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[h, w], |i| ((i / w) + (i % w)) as f64 / (h + w - 2) as f64).unwrap()
}

fn add_noise(x: &Tensor, sigma: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    Tensor::from_fn(x.shape(), |i| x.data()[i] + n.sample(&mut rng)).unwrap()
}

fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0).unwrap();
    Tensor::from_fn(shape, |_| u.sample(&mut rng)).unwrap()
}

/// Textured test image: a ramp plus fixed sinusoids and a bright square.
fn textured(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |i| {
        let (y, x) = ((i / n) as f64, (i % n) as f64);
        let mut v = 0.3 + 0.4 * (x + y) / (2.0 * n as f64);
        v += 0.1 * (x * 0.9).sin() * (y * 0.4).cos();
        if (10.0..20.0).contains(&x) && (12.0..24.0).contains(&y) {
            v += 0.2;
        }
        v
    })
    .unwrap()
}

fn gaussian_blur(x: &Tensor, sigma: f64) -> Tensor {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    Tensor::from_fn(&[h, w], |i| {
        let (y, xx) = ((i / w) as isize, (i % w) as isize);
        let (mut acc, mut norm) = (0.0, 0.0);
        for (a, ta) in (-r..=r).zip(&taps) {
            for (b, tb) in (-r..=r).zip(&taps) {
                let yy = (y + a).clamp(0, h as isize - 1) as usize;
                let xc = (xx + b).clamp(0, w as isize - 1) as usize;
                acc += ta * tb * x.data()[yy * w + xc];
                norm += ta * tb;
            }
        }
        acc / norm
    })
    .unwrap()
}

fn hflip(x: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    let w = s[s.len() - 1];
    Tensor::from_fn(&s, |i| {
        let (row, col) = (i / w, i % w);
        x.data()[row * w + (w - 1 - col)]
    })
    .unwrap()
}

/// Per-window SSIM written directly from the l·c·s definition.
fn naive_ssim(x: &Tensor, y: &Tensor, max_val: f64) -> f64 {
    let a = luma(x).unwrap();
    let b = luma(y).unwrap();
    let (k, sigma) = (11usize, 1.5f64);
    let mut win = vec![0.0; k * k];
    for j in 0..k {
        for i in 0..k {
            let (dy, dx) = (j as f64 - 5.0, i as f64 - 5.0);
            win[j * k + i] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let c1 = (0.01 * max_val).powi(2);
    let c2 = (0.03 * max_val).powi(2);
    let c3 = c2 / 2.0;
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=a.h - k {
        for ox in 0..=a.w - k {
            let at = |p: &dhformer::metrics::Plane, j: usize, i: usize| p.data[(oy + j) * p.w + ox + i];
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    mx += win[j * k + i] * at(&a, j, i);
                    my += win[j * k + i] * at(&b, j, i);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let (dx, dy) = (at(&a, j, i) - mx, at(&b, j, i) - my);
                    vx += win[j * k + i] * dx * dx;
                    vy += win[j * k + i] * dy * dy;
                    cov += win[j * k + i] * dx * dy;
                }
            }
            let (sx, sy) = (vx.sqrt(), vy.sqrt());
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let c = (2.0 * sx * sy + c2) / (vx + vy + c2);
            let s = (cov + c3) / (sx * sy + c3);
            acc += l * c * s;
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn psnr_closed_forms() {
    let x = Tensor::full(&[3, 4, 4], 0.5).unwrap();
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
    let y = x.map(|v| v + 0.1);
    assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let z = x.map(|v| v * 255.0);
    let z1 = z.map(|v| v - 1.0);
    let expected = 10.0 * (255.0f64 * 255.0).log10();
    assert!((psnr(&z, &z1, 255.0).unwrap() - expected).abs() < 1e-9);
    assert!((expected - 48.1308).abs() < 1e-4);
    assert!(psnr(&x, &Tensor::zeros(&[3, 4, 5]).unwrap(), 1.0).is_err());
    assert!(psnr(&x, &y, 0.0).is_err());
}

#[test]
fn psnr_decreases_with_noise() {
    let x = random_image(&[3, 16, 16], 1);
    let mut last = f64::INFINITY;
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let p = psnr(&x, &add_noise(&x, sigma, 2), 1.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn ssim_matches_naive_windows() {
    let x = ramp(16, 16);
    let y = add_noise(&x, 0.05, 7);
    let fast = ssim(&x, &y, 1.0).unwrap();
    assert!((fast - naive_ssim(&x, &y, 1.0)).abs() <= 1e-10);
    for seed in 0..5 {
        let a = random_image(&[3, 13 + seed as usize, 20], seed);
        let b = add_noise(&a, 0.1, seed + 100);
        let fast = ssim(&a, &b, 1.0).unwrap();
        assert!((fast - naive_ssim(&a, &b, 1.0)).abs() <= 1e-10, "seed {seed}");
    }
    let t = textured(32);
    let tb = gaussian_blur(&t, 1.0);
    assert!((ssim(&t, &tb, 1.0).unwrap() - naive_ssim(&t, &tb, 1.0)).abs() <= 1e-10);
}

#[test]
fn ssim_basic_properties() {
    let x = ramp(16, 16);
    assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
    let inv = x.map(|v| 1.0 - v);
    let s = ssim(&x, &inv, 1.0).unwrap();
    assert!((-1.0..1.0).contains(&s));
    assert!(ssim(&ramp(10, 16), &ramp(10, 16), 1.0).is_err());
    assert!(ssim(&ramp(16, 16), &ramp(16, 17), 1.0).is_err());
}

#[test]
fn self_similarity_on_random_images() {
    for seed in 0..20 {
        let x = random_image(&[3, 32, 32], 200 + seed);
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
        assert!((fsim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn fsim_identity_symmetry_and_range() {
    let x = textured(32);
    assert!((fsim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
    let flat = Tensor::full(&[32, 32], 0.4).unwrap();
    assert!((fsim(&flat, &flat).unwrap() - 1.0).abs() <= 1e-9);

    let y = add_noise(&x, 0.05, 3);
    let a = fsim(&x, &y).unwrap();
    let b = fsim(&y, &x).unwrap();
    assert!((a - b).abs() <= 1e-12);
    assert!(a > 0.0 && a < 1.0);

    let m = fsim_maps(&x, &y).unwrap();
    assert!(m.pc_m.data().iter().all(|&v| v >= 0.0));
    assert!(m.pc_x.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(m.s_l.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(fsim(&ramp(16, 16), &ramp(16, 16)).is_err());
}

#[test]
fn fsim_prefers_light_blur() {
    for n in [32, 40] {
        let x = textured(n);
        let light = fsim(&x, &gaussian_blur(&x, 0.7)).unwrap();
        let heavy = fsim(&x, &gaussian_blur(&x, 2.5)).unwrap();
        assert!(heavy < light, "{heavy} !< {light}");
    }
    let r = add_noise(&ramp(32, 32), 0.02, 9);
    let light = fsim(&r, &gaussian_blur(&r, 0.7)).unwrap();
    let heavy = fsim(&r, &gaussian_blur(&r, 2.5)).unwrap();
    assert!(heavy < light);
}

#[test]
fn metrics_ignore_joint_horizontal_flips() {
    let x = random_image(&[3, 33, 33], 11);
    let y = add_noise(&x, 0.05, 12);
    let (fx, fy) = (hflip(&x), hflip(&y));
    assert!((psnr(&x, &y, 1.0).unwrap() - psnr(&fx, &fy, 1.0).unwrap()).abs() <= 1e-12);
    assert!((ssim(&x, &y, 1.0).unwrap() - ssim(&fx, &fy, 1.0).unwrap()).abs() <= 1e-12);
    let d = (fsim(&x, &y).unwrap() - fsim(&fx, &fy).unwrap()).abs();
    assert!(d <= 1e-9, "{d}");

    // even sizes: the filter grid has an unpaired Nyquist column
    let x = random_image(&[3, 32, 32], 13);
    let y = add_noise(&x, 0.05, 14);
    let d = (fsim(&x, &y).unwrap() - fsim(&hflip(&x), &hflip(&y)).unwrap()).abs();
    assert!(d <= 1e-5, "{d}");
}

fn row(name: &str, p: f64, s: f64, f: Option<f64>) -> MetricRow {
    MetricRow { image: name.into(), psnr_db: p, ssim: s, fsim: f }
}

#[test]
fn aggregate_means() {
    let one = aggregate(vec![row("a", 21.5, 0.8, Some(0.9))]).unwrap();
    assert_eq!((one.mean_psnr, one.mean_ssim, one.mean_fsim), (21.5, 0.8, Some(0.9)));

    let two = aggregate(vec![row("a", 20.0, 0.5, Some(0.6)), row("b", 30.0, 0.7, Some(0.8))]).unwrap();
    assert!((two.mean_psnr - 25.0).abs() <= 1e-12);
    assert!((two.mean_ssim - 0.6).abs() <= 1e-12);
    assert!((two.mean_fsim.unwrap() - 0.7).abs() <= 1e-12);

    let capped = aggregate(vec![row("a", f64::INFINITY, 1.0, None), row("b", 40.0, 0.9, None)]).unwrap();
    assert_eq!(capped.capped, vec![0]);
    assert_eq!(capped.rows[0].psnr_db, DEFAULT_PSNR_CAP);
    assert!((capped.mean_psnr - 80.0).abs() <= 1e-12);
    assert_eq!(capped.mean_fsim, None);

    assert!(aggregate(Vec::new()).is_err());
    assert!(MetricReport::new(vec![row("a", f64::NAN, 1.0, None)], 120.0).is_err());
}

#[test]
fn report_csv_layout() {
    let r = aggregate(vec![row("img_0", 20.0, 0.5, Some(0.6)), row("img_1", f64::INFINITY, 1.0, None)]).unwrap();
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,psnr_db,ssim,fsim");
    assert_eq!(lines[1], "img_0,20,0.5,0.6");
    assert_eq!(lines[2], "img_1,120,1,");
    assert_eq!(lines[3], "mean,70,0.75,0.6");
    assert_eq!(lines[4], "# psnr cap 120 dB; capped: img_1");
}

#[test]
fn report_csv_round_trip() {
    let r = aggregate(vec![
        row("a", 23.456789012345, 0.7123456789, Some(0.81234567891)),
        row("b", f64::INFINITY, 1.0, None),
        row("c", 1.0 / 3.0, 0.1 + 0.2, Some(2.0 / 3.0)),
    ])
    .unwrap();
    let back = MetricReport::from_csv(&r.to_csv()).unwrap();
    assert_eq!(back, r);
    let mut tampered = r.to_csv().replacen("a,23", "a,24", 1);
    assert!(MetricReport::from_csv(&tampered).is_err());
    tampered = "image,psnr\n".into();
    assert!(MetricReport::from_csv(&tampered).is_err());
}

#[test]
fn row_compute_scores_all_metrics() {
    let x = random_image(&[3, 32, 32], 300);
    let y = add_noise(&x, 0.03, 301);
    let r = MetricRow::compute("x", &y, &x).unwrap();
    assert!(r.psnr_db > 25.0 && r.ssim < 1.0 && r.fsim.unwrap() < 1.0);
    let small = MetricRow::compute("s", &random_image(&[3, 16, 16], 1), &random_image(&[3, 16, 16], 2)).unwrap();
    assert!(small.fsim.is_none());
}
