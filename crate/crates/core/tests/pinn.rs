use std::path::Path;

use bos_tomo::diffengine::{render_pixel_quasilinear, Jet};
use bos_tomo::math::{Aabb, Vec3};
use bos_tomo::pinn::*;
use bos_tomo::renderer::{Falloff, Image};
use bos_tomo::scene::{reference_config, NondimConstants, Scene};
use bos_tomo::tracer::Integrator;
use bos_tomo::{NeuralField64, Scene64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn room() -> Aabb<f64> {
    Aabb::new(Vec3::new(-1.2, 0.0, 0.0), Vec3::new(2.9, 4.0, 3.0))
}

fn consts() -> NondimConstants<f64> {
    NondimConstants {
        re: 80.0,
        pe: 40.0,
        ri: 1.5,
        l: 2.0,
        u: 0.2,
        e_g: Vec3::new(0.0, 0.0, -1.0),
    }
}

fn net(layers: usize, width: usize, seed: u64) -> NeuralField64 {
    let cfg = NetworkConfig {
        hidden_layers: layers,
        width,
        seed,
        ..Default::default()
    };
    NeuralField::new(&cfg, &room()).unwrap()
}

fn points(n: usize, seed: u64) -> Vec<Vec3<f64>> {
    let r = room();
    let e = r.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| r.min + Vec3::new(rng.gen::<f64>() * e.x, rng.gen::<f64>() * e.y, rng.gen::<f64>() * e.z))
        .collect()
}

/// Plain forward pass: scaled inputs, tanh hidden layers, linear output.
fn plain_forward(nf: &NeuralField64, x: Vec3<f64>) -> Vec<f64> {
    let (c, h) = (nf.center(), nf.half_extent());
    let mut a = vec![(x.x - c.x) / h.x, (x.y - c.y) / h.y, (x.z - c.z) / h.z];
    let sizes = nf.sizes();
    let p = nf.params();
    for l in 0..sizes.len() - 1 {
        let (ni, no) = (sizes[l], sizes[l + 1]);
        let off = nf.layer_offset(l);
        let mut z = vec![0.0; no];
        for o in 0..no {
            let mut s = p[off + ni * no + o];
            for i in 0..ni {
                s += p[off + o * ni + i] * a[i];
            }
            z[o] = if l + 2 == sizes.len() { s } else { s.tanh() };
        }
        a = z;
    }
    a
}

#[test]
fn forward_matches_plain_reimplementation() {
    let nf = net(3, 20, 2);
    for x in points(100, 1) {
        let s = nf.field_eval(x).unwrap();
        let want = plain_forward(&nf, x);
        let got = [s.t_nd, s.p, s.u.x, s.u.y, s.u.z];
        for k in 0..5 {
            assert!((got[k] - want[k]).abs() <= 1e-12 * want[k].abs().max(1.0));
        }
    }
}

#[test]
fn zero_parameters_give_output_biases() {
    let mut nf = net(2, 8, 0);
    let n = nf.n_params();
    let mut p = vec![0.0; n];
    let out_b = n - OUTPUTS;
    for k in 0..OUTPUTS {
        p[out_b + k] = 0.1 * (k as f64 + 1.0);
    }
    nf.set_params(p).unwrap();
    let s = nf.field_eval(Vec3::new(0.3, 1.0, 2.0)).unwrap();
    assert_eq!([s.t_nd, s.p, s.u.x, s.u.y, s.u.z], [0.1, 0.2, 0.30000000000000004, 0.4, 0.5]);
    nf.set_params(vec![0.0; n]).unwrap();
    let s = nf.field_eval(Vec3::new(2.0, 3.0, 0.5)).unwrap();
    assert_eq!((s.t_nd, s.p, s.u), (0.0, 0.0, Vec3::zero()));
}

#[test]
fn evaluation_is_deterministic_and_domain_checked() {
    let nf = net(2, 8, 5);
    let x = Vec3::new(0.1, 0.2, 0.3);
    assert_eq!(nf.field_eval(x).unwrap(), nf.field_eval(x).unwrap());
    assert!(nf.field_eval(Vec3::new(3.5, 1.0, 1.0)).is_err());
    assert!(nf.field_eval(room().max).is_ok());
}

#[test]
fn residuals_vanish_for_manufactured_solutions() {
    let c = consts();
    let cc = 0.37;
    let hydro = JetFlow(move |x: [Jet<f64>; 3]| {
        let z = Jet::constant(0.0);
        // ∂p/∂x_i per meter = -Ri c e_g,i / L
        let k = -c.ri * cc / c.l;
        let p = x[0] * (k * c.e_g.x) + x[1] * (k * c.e_g.y) + x[2] * (k * c.e_g.z) + 4.0;
        [Jet::constant(cc), p, z, z, z]
    });
    let w0 = 0.8;
    let advect = JetFlow(move |x: [Jet<f64>; 3]| {
        let z = Jet::constant(0.0);
        [x[2] * (1.0 / c.l), Jet::constant(0.3), z, z, Jet::constant(w0)]
    });
    let mut worst = [0.0f64; 3];
    for x in points(1000, 7) {
        let r = residuals(&hydro, x, &c).unwrap();
        worst[0] = worst[0].max(r.r_mass.abs());
        worst[1] = worst[1].max(r.r_mom.norm());
        worst[2] = worst[2].max(r.r_heat.abs());
        let a = residuals(&advect, x, &c).unwrap();
        assert_eq!(a.r_mass, 0.0);
        assert!((a.r_heat - w0).abs() < 1e-14);
    }
    assert!(worst.iter().all(|&w| w < 1e-10), "{worst:?}");
}

#[test]
fn curl_fields_are_divergence_free() {
    let c = consts();
    // u = ∇ × (0, 0, ψ) with ψ = x²y + 3xy² − y³ + xyz².
    let flow = JetFlow(|x: [Jet<f64>; 3]| {
        let [a, b, z] = x;
        let dpsi_dy = a * a + a * b * 6.0 + b * b * (-3.0) + a * z * z;
        let dpsi_dx = a * b * 2.0 + b * b * 3.0 + b * z * z;
        let zero = Jet::constant(0.0);
        [zero, zero, dpsi_dy, -dpsi_dx, zero]
    });
    for x in points(200, 8) {
        assert!(residuals(&flow, x, &c).unwrap().r_mass.abs() < 1e-8);
    }
}

#[test]
fn pde_loss_batched_matches_per_point_sum() {
    let nf = net(3, 16, 3);
    let c = consts();
    let pts = points(64, 4);
    let gamma = [1.0, 0.7, 1.3];
    let batched = loss_pde(&nf, &pts, gamma, &c).unwrap();
    let (with_grad, _) = loss_pde_grad(&nf, &pts, gamma, &c).unwrap();
    let mut oracle = 0.0;
    for &x in &pts {
        let j = nf.eval_jet(x).unwrap();
        let r = residuals_from_jets(&j, &c);
        oracle += gamma[0] * r.r_mass * r.r_mass + gamma[1] * r.r_mom.norm_sq() + gamma[2] * r.r_heat * r.r_heat;
    }
    assert!((batched - oracle).abs() <= 1e-12 * oracle);
    assert!((with_grad - oracle).abs() <= 1e-12 * oracle);
}

#[test]
fn pde_loss_is_zero_for_exact_heads() {
    let c = consts();
    let flow = JetFlow(|_x: [Jet<f64>; 3]| {
        let z = Jet::constant(0.0);
        [z, Jet::constant(2.0), z, z, z]
    });
    assert_eq!(loss_pde(&flow, &points(10, 1), [1.0; 3], &c).unwrap(), 0.0);
    assert!(loss_pde(&flow, &[], [1.0; 3], &c).is_err());
}

#[test]
fn boundary_loss_examples() {
    let reference: Vec<FlowState<f64>> = (0..5)
        .map(|i| FlowState {
            t_nd: 0.3 * i as f64 - 0.5,
            p: (i as f64).sin(),
            u: Vec3::new(0.1 * i as f64, -0.2, 0.05),
        })
        .collect();
    let s = reference_scales(&reference, None).unwrap();
    let m = BoundaryNormalization::ReferenceMax;
    assert_eq!(boundary_loss_of(&reference, &reference, m, s), 0.0);
    let doubled: Vec<FlowState<f64>> = reference
        .iter()
        .map(|r| FlowState {
            t_nd: 2.0 * r.t_nd,
            p: 2.0 * r.p,
            u: r.u * 2.0,
        })
        .collect();
    let want: f64 = reference
        .iter()
        .map(|r| (r.t_nd / s[0]).powi(2) + (r.p / s[1]).powi(2) + (r.u / s[2]).norm_sq())
        .sum();
    let got = boundary_loss_of(&doubled, &reference, m, s);
    assert!((got - want).abs() < 1e-14 * want);
}

#[test]
fn boundary_loss_through_network() {
    let nf = net(2, 8, 9);
    let pts = points(30, 2);
    let reference: Vec<FlowState<f64>> = pts.iter().map(|&x| nf.field_eval(x).unwrap()).collect();
    let samples = BoundarySamples {
        points: pts,
        reference: reference.clone(),
    };
    let s = reference_scales(&reference, None).unwrap();
    for m in [BoundaryNormalization::ReferenceMax, BoundaryNormalization::OwnMax] {
        assert_eq!(loss_boundary(&nf, &samples, m, s).unwrap(), 0.0);
        let (l, g) = loss_boundary_grad(&nf, &samples, m, s).unwrap();
        // The batched forward pass sums in a different order.
        assert!(l < 1e-24);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }
    let bad = BoundarySamples {
        points: samples.points.clone(),
        reference: reference[..3].to_vec(),
    };
    assert!(loss_boundary(&nf, &bad, BoundaryNormalization::ReferenceMax, s).is_err());
}

#[test]
fn own_max_gradient_matches_finite_differences() {
    let nf = net(2, 8, 11);
    let pts = points(20, 12);
    let reference: Vec<FlowState<f64>> = pts
        .iter()
        .map(|x| FlowState {
            t_nd: 0.1 * x.z,
            p: 0.05 * x.x,
            u: Vec3::new(0.0, 0.1, 0.2 * x.y.sin()),
        })
        .collect();
    let s = reference_scales(&reference, None).unwrap();
    let samples = BoundarySamples { points: pts, reference };
    let m = BoundaryNormalization::OwnMax;
    let (_, g) = loss_boundary_grad(&nf, &samples, m, s).unwrap();
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in (0..nf.n_params()).step_by(7) {
        let f = |h: f64| {
            let mut n2 = nf.clone();
            n2.params_mut()[k] += h;
            loss_boundary(&n2, &samples, m, s).unwrap()
        };
        let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
        assert!((fd - g[k]).abs() <= 1e-5 * gmax, "{k}: {fd} vs {}", g[k]);
    }
}

fn bos_scene() -> Scene64 {
    let mut c = reference_config();
    c.camera.resolution = [3, 4];
    c.render.integrator = Integrator::Quasilinear;
    c.render.step_m = 0.05;
    c.render.falloff = Falloff::InverseSquare;
    Scene::from_config(c, Path::new(".")).unwrap()
}

fn self_measurement(nf: &NeuralField64, scene: &Scene64, dims: [usize; 3]) -> Image<f64> {
    let (grid, _) = eta_proxy(nf, &scene.medium, dims).unwrap();
    let data = (0..12)
        .map(|j| render_pixel_quasilinear(scene, &grid, j, 2, 5).unwrap())
        .collect();
    Image {
        height: 3,
        width: 4,
        spp: 2,
        seed: 5,
        data,
    }
}

#[test]
fn bos_loss_examples() {
    let scene = bos_scene();
    let nf = net(2, 8, 1);
    let dims = [5, 5, 4];
    let mut meas = self_measurement(&nf, &scene, dims);
    let pixels: Vec<usize> = (0..12).collect();
    assert_eq!(loss_bos(&nf, &scene, &meas, &pixels, 2, 5, dims).unwrap(), 0.0);
    meas.data[7] += 1e-3;
    let l = loss_bos(&nf, &scene, &meas, &pixels, 2, 5, dims).unwrap();
    assert!((l - 1e-6).abs() < 1e-15);
    let (lg, _) = loss_bos_grad(&nf, &scene, &meas, &pixels, 2, 5, dims).unwrap();
    assert!((lg - l).abs() < 1e-18);
}

#[test]
fn bos_loss_equals_summation_oracle() {
    let scene = bos_scene();
    let nf = net(2, 8, 3);
    let dims = [5, 5, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let meas = Image {
        height: 3,
        width: 4,
        spp: 2,
        seed: 5,
        data: (0..12).map(|_| rng.gen_range(0.0..1e-3)).collect(),
    };
    let pixels = vec![0, 5, 11, 3, 5];
    let (grid, _) = eta_proxy(&nf, &scene.medium, dims).unwrap();
    let oracle: f64 = pixels
        .iter()
        .map(|&j| (meas.data[j] - render_pixel_quasilinear(&scene, &grid, j, 2, 5).unwrap()).powi(2))
        .sum();
    let l = loss_bos(&nf, &scene, &meas, &pixels, 2, 5, dims).unwrap();
    assert!((l - oracle).abs() <= 1e-14 * oracle);
}

struct TotalSetup {
    scene: Scene64,
    nf: NeuralField64,
    meas: Image<f64>,
    colloc: Vec<Vec3<f64>>,
    bnd: BoundarySamples,
    scales: FieldScales,
}

fn total_setup() -> TotalSetup {
    let scene = bos_scene();
    let nf = net(2, 8, 13);
    let mut meas = self_measurement(&net(2, 8, 14), &scene, [5, 5, 4]);
    meas.data[2] *= 1.01;
    let bpts = points(12, 3);
    let reference: Vec<FlowState<f64>> = bpts
        .iter()
        .map(|x| FlowState {
            t_nd: 0.1 * x.z,
            p: 0.05,
            u: Vec3::new(0.0, 0.1, 0.0),
        })
        .collect();
    let scales = reference_scales(&reference, None).unwrap();
    TotalSetup {
        scene,
        nf,
        meas,
        colloc: points(16, 4),
        bnd: BoundarySamples {
            points: bpts,
            reference,
        },
        scales,
    }
}

fn batches<'a>(s: &'a TotalSetup, pixels: &'static [usize]) -> Batches<'a> {
    Batches {
        collocation: &s.colloc,
        boundary: &s.bnd,
        boundary_mode: BoundaryNormalization::ReferenceMax,
        boundary_scales: s.scales,
        pixels,
        measured: Some(&s.meas),
        spp: 2,
        seed: 5,
        proxy_dims: [5, 5, 4],
    }
}

static PIXELS: [usize; 6] = [0, 1, 2, 6, 9, 11];

#[test]
fn total_loss_selects_and_weights_terms() {
    let s = total_setup();
    let b = batches(&s, &PIXELS);
    let w = |l: [f64; 3]| LossWeights {
        lambda: l,
        gamma: [1.0; 3],
    };
    let (bos, _) = total_loss(&s.nf, &s.scene, &b, &w([1.0, 0.0, 0.0])).unwrap();
    assert_eq!(bos, loss_bos(&s.nf, &s.scene, &s.meas, &PIXELS, 2, 5, [5, 5, 4]).unwrap());
    let (bnd, _) = total_loss(&s.nf, &s.scene, &b, &w([0.0, 1.0, 0.0])).unwrap();
    assert_eq!(bnd, loss_boundary(&s.nf, &s.bnd, BoundaryNormalization::ReferenceMax, s.scales).unwrap());
    let (pde, _) = total_loss(&s.nf, &s.scene, &b, &w([0.0, 0.0, 1.0])).unwrap();
    let (t, terms) = total_loss(&s.nf, &s.scene, &b, &w([2.0, 0.5, 3.0])).unwrap();
    assert_eq!(terms.bos, bos);
    assert!((t - (2.0 * bos + 0.5 * bnd + 3.0 * pde)).abs() <= 1e-14 * t);
    assert!(total_loss(&s.nf, &s.scene, &b, &w([0.0; 3])).is_err());

    // Zero-weight terms are skipped, so their batches may be empty or missing.
    let empty = BoundarySamples::default();
    let b2 = Batches {
        collocation: &[],
        boundary: &empty,
        ..batches(&s, &PIXELS)
    };
    let (only_bos, _) = total_loss(&s.nf, &s.scene, &b2, &w([1.0, 0.0, 0.0])).unwrap();
    assert_eq!(only_bos, bos);
    let b3 = Batches {
        measured: None,
        ..batches(&s, &PIXELS)
    };
    assert!(total_loss(&s.nf, &s.scene, &b3, &w([0.0, 1.0, 1.0])).is_ok());
}

#[test]
fn loss_weights_validation() {
    let mut w = LossWeights::default();
    assert!(w.validate().is_ok());
    w.gamma[1] = -1.0;
    assert!(w.validate().is_err());
    let w = LossWeights {
        lambda: [0.0; 3],
        gamma: [1.0; 3],
    };
    assert!(w.validate().is_err());
}

#[test]
fn relu_rejected_for_second_order_terms() {
    let cfg = NetworkConfig {
        hidden_layers: 1,
        width: 4,
        activation: Activation::Relu,
        ..Default::default()
    };
    let nf = NeuralField::new(&cfg, &room()).unwrap();
    assert!(loss_pde_grad(&nf, &points(3, 1), [1.0; 3], &consts()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pde_loss_is_permutation_invariant(seed in 0u64..1000, rot in 1usize..31) {
        let nf = net(2, 10, seed);
        let c = consts();
        let pts = points(32, seed + 1);
        let mut perm = pts.clone();
        perm.rotate_left(rot);
        perm.swap(0, 5);
        let a = loss_pde(&nf, &pts, [1.0; 3], &c).unwrap();
        let b = loss_pde(&nf, &perm, [1.0; 3], &c).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn total_loss_is_linear_in_lambda(l1 in 0.0f64..5.0, l2 in 0.0f64..5.0, l3 in 0.1f64..5.0, k in 0.1f64..10.0) {
        let s = total_setup();
        let b = batches(&s, &PIXELS);
        let w = LossWeights { lambda: [l1, l2, l3], gamma: [1.0; 3] };
        let wk = LossWeights { lambda: [k * l1, k * l2, k * l3], gamma: [1.0; 3] };
        let (t, terms) = total_loss(&s.nf, &s.scene, &b, &w).unwrap();
        let (tk, _) = total_loss(&s.nf, &s.scene, &b, &wk).unwrap();
        prop_assert!((tk - k * t).abs() <= 1e-12 * tk.abs().max(1e-300));
        let direct = l1 * terms.bos + l2 * terms.boundary + l3 * terms.pde;
        prop_assert!((t - direct).abs() <= 1e-14 * t.abs().max(1e-300));
    }

    #[test]
    fn reference_max_normalization_cancels_positive_scaling(
        vals in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 2..20),
        c in 0.01f64..100.0,
        noise in -0.5f64..0.5,
    ) {
        let reference: Vec<FlowState<f64>> = vals
            .iter()
            .map(|&(a, b, d)| FlowState { t_nd: a, p: b, u: Vec3::new(d, 0.5 * a, 0.1) })
            .collect();
        let s = reference_scales(&reference, Some(1.0)).unwrap();
        // Fixed normalized prediction, expressed in each reference's units.
        let pred_n: Vec<FlowState<f64>> = reference
            .iter()
            .map(|r| FlowState { t_nd: r.t_nd / s[0] + noise, p: r.p / s[1], u: r.u / s[2] })
            .collect();
        let to_units = |sc: [f64; 3]| -> Vec<FlowState<f64>> {
            pred_n.iter().map(|q| FlowState { t_nd: q.t_nd * sc[0], p: q.p * sc[1], u: q.u * sc[2] }).collect()
        };
        let scaled: Vec<FlowState<f64>> = reference
            .iter()
            .map(|r| FlowState { t_nd: c * r.t_nd, p: c * r.p, u: r.u * c })
            .collect();
        let sc = reference_scales(&scaled, Some(1.0)).unwrap();
        let m = BoundaryNormalization::ReferenceMax;
        let a = boundary_loss_of(&to_units(s), &reference, m, s);
        let b = boundary_loss_of(&to_units(sc), &scaled, m, sc);
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-12));
    }
}
