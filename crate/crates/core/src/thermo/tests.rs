use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::check::relative_discrepancy;
use crate::datagen::{generate_path, ElastoPlasticParams, LoadingProgram};
use crate::nets::{GruCell, VanillaRnnCell};
use crate::pipeline::{fit_stats, FeatureStats};

fn spec(variant: Variant, thermal: Thermal) -> TcrnnSpec {
    TcrnnSpec {
        cell: CellKind::Gru,
        strain_dim: 1,
        hidden_dim: 4,
        isv_dim: 2,
        rnn_steps: 3,
        energy_hidden: vec![5],
        variant,
        thermal,
        activation: Activation::Silu,
    }
}

fn stats(thermal: bool) -> StandardizationStats {
    let mut s = StandardizationStats::identity(1, thermal);
    s.strain = FeatureStats::scalar(4e-3, 2.5e-3).unwrap();
    s.stress = FeatureStats::scalar(3e7, 8e7).unwrap();
    s.free_energy = Some(FeatureStats::scalar(2e4, 1.5e4).unwrap());
    s.dissipation = Some(FeatureStats::scalar(400.0, 900.0).unwrap());
    if thermal {
        s.temperature = Some(FeatureStats::scalar(300.0, 20.0).unwrap());
    }
    s
}

/// Random model with random (nonzero) biases.
fn model(seed: u64, spec: TcrnnSpec) -> TcrnnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thermal = spec.is_thermal();
    let mut m = TcrnnModel::init(&mut rng, spec, stats(thermal)).unwrap();
    for (name, v) in m.named_params_mut() {
        if name.contains(".b") {
            v.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        }
    }
    m
}

fn window(rng: &mut impl Rng, steps: usize, thermal: bool) -> SequenceWindow {
    let mut u = || rng.random_range(-1.5..1.5);
    let history = (0..steps - 1)
        .map(|_| StepState { strain: vec![u()], stress: vec![u()], temperature: thermal.then(&mut u) })
        .collect();
    let strain = vec![u()];
    SequenceWindow { history, current: CurrentStep { strain, temperature: thermal.then(u) } }
}

fn rates(rng: &mut impl Rng, steps: usize, thermal: bool) -> SequenceWindow {
    let mut u = || rng.random_range(-1.0..1.0);
    let history = (0..steps - 1)
        .map(|_| StepState { strain: vec![2e-3 * u()], stress: vec![5e7 * u()], temperature: thermal.then(|| 10.0 * u()) })
        .collect();
    let strain = vec![2e-3 * u()];
    SequenceWindow { history, current: CurrentStep { strain, temperature: thermal.then(|| 10.0 * u()) } }
}

fn zero_head_weights(m: &mut TcrnnModel) {
    let head = m.isv_cell.head_mut();
    head.w.data_mut().iter_mut().for_each(|x| *x = 0.0);
}

/// Zeroes the first-layer energy weights reading inputs `cols`.
fn zero_energy_columns(m: &mut TcrnnModel, cols: std::ops::Range<usize>) {
    let w = &mut m.energy_head.layers_mut()[0].w;
    let (r, c) = w.dims();
    for i in 0..r {
        for j in cols.clone() {
            w.data_mut()[i * c + j] = 0.0;
        }
    }
}

#[test]
fn zero_model_outputs_destandardized_constants() {
    let spec = spec(Variant::Rate, Thermal::Isothermal);
    let mut m = TcrnnModel::zeros(spec, stats(false)).unwrap();
    let bz = vec![0.25, -0.5];
    m.isv_cell.head_mut().b = Value::vector(bz.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = window(&mut rng, 3, false);
    assert_eq!(infer_isv(&m, &w).unwrap(), bz);
    let input = ThermoInput { window: w.clone(), rates: Some(rates(&mut rng, 3, false)), dt: 1.0 };
    let out = forward_all(&m, &input).unwrap();
    assert_eq!(out.free_energy, 2e4);
    assert_eq!(out.stress, vec![0.0]);
    assert_eq!(out.dissipation, Some(0.0));
    assert_eq!(out.isv, bz);
}

#[test]
fn isv_constant_when_head_weights_vanish() {
    let mut m = model(2, spec(Variant::Rate, Thermal::Isothermal));
    zero_head_weights(&mut m);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = infer_isv(&m, &window(&mut rng, 3, false)).unwrap();
    let b = infer_isv(&m, &window(&mut rng, 3, false)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, m.isv_cell.head().b.data().to_vec());
}

#[test]
fn isv_depends_on_history_stress() {
    let m = model(4, spec(Variant::Rate, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = window(&mut rng, 3, false);
    let h = 1e-6;
    let mut plus = w.clone();
    plus.history[1].stress[0] += h;
    let mut minus = w.clone();
    minus.history[1].stress[0] -= h;
    let fd = (infer_isv(&m, &plus).unwrap()[0] - infer_isv(&m, &minus).unwrap()[0]) / (2.0 * h);

    let mut g = Graph::new();
    let bound = m.bind(&mut g).unwrap();
    let nodes = m.build(&mut g, &bound, &[TcrnnModel::plain(&w)], None).unwrap();
    let z0 = g.slice_rows(nodes.isv, 0, 1).unwrap();
    let z0 = g.sum(z0).unwrap();
    let grad = g.backward(z0, &[nodes.steps[1]]).unwrap().into_values().remove(0);
    let analytic = grad.data()[1];
    assert!(analytic.abs() > 1e-6);
    assert!(relative_discrepancy(analytic, fd, 1e-3) < 1e-6, "{analytic} vs {fd}");
}

#[test]
fn free_energy_head() {
    let spec = spec(Variant::Rate, Thermal::Isothermal);
    let zero = TcrnnModel::zeros(spec.clone(), stats(false)).unwrap();
    assert_eq!(free_energy(&zero, &[0.3], None, &[0.1, 0.2]).unwrap(), 0.0);

    let mut m = model(6, spec);
    assert_eq!(
        free_energy(&m, &[0.3], None, &[0.1, 0.2]).unwrap(),
        m.energy_head.forward(&[0.3, 0.1, 0.2]).unwrap()[0]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = window(&mut rng, 3, false);
    let z = infer_isv(&m, &w).unwrap();
    let mut g = Graph::new();
    let bound = m.bind(&mut g).unwrap();
    let nodes = m.build(&mut g, &bound, &[TcrnnModel::plain(&w)], None).unwrap();
    assert_eq!(g.value(nodes.energy_bar).item(), free_energy(&m, &w.current.strain, None, &z).unwrap());

    zero_energy_columns(&mut m, 1..3);
    let a = free_energy(&m, &[0.3], None, &[0.1, 0.2]).unwrap();
    let b = free_energy(&m, &[0.3], None, &[-4.0, 7.0]).unwrap();
    assert_eq!(a, b);
    assert!(free_energy(&m, &[0.3], None, &[0.1]).is_err());
}

#[test]
fn stress_of_zero_and_linear_heads() {
    let sp = spec(Variant::Rate, Thermal::Isothermal);
    let zero = TcrnnModel::zeros(sp.clone(), stats(false)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = window(&mut rng, 3, false);
    assert_eq!(predict_stress(&zero, &w).unwrap(), vec![0.0]);

    let mut linear = sp;
    linear.energy_hidden = vec![];
    let mut m = TcrnnModel::zeros(linear, stats(false)).unwrap();
    m.energy_head.layers_mut()[0].w = Value::matrix(1, 3, vec![0.7, -2.0, 3.0]);
    let s = stats(false);
    let expected = s.energy().1 / s.strain.std[0] * 0.7;
    assert!(relative_discrepancy(predict_stress(&m, &w).unwrap()[0], expected, 0.0) < 1e-15);
}

/// Destandardized energy as a function of physical strain with the ISVs held.
fn physical_energy(m: &TcrnnModel, eps: f64, temp: Option<f64>, z: &[f64]) -> f64 {
    let s = &m.stats;
    let (mean_f, std_f) = s.energy();
    let e = s.strain.standardize(&[eps])[0];
    let t = temp.map(|t| s.temperature.as_ref().unwrap().standardize(&[t])[0]);
    mean_f + std_f * free_energy(m, &[e], t, z).unwrap()
}

#[test]
fn stress_is_the_strain_derivative_of_energy() {
    for seed in 0..60 {
        let m = model(100 + seed, spec(Variant::Rate, Thermal::Isothermal));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = window(&mut rng, 3, false);
        let z = infer_isv(&m, &w).unwrap();
        let eps = m.stats.strain.destandardize(&w.current.strain)[0];
        let h = 1e-6 * m.stats.strain.std[0];
        let fd = (physical_energy(&m, eps + h, None, &z) - physical_energy(&m, eps - h, None, &z)) / (2.0 * h);
        let sigma = predict_stress(&m, &w).unwrap()[0];
        let scale = m.stats.energy().1 / m.stats.strain.std[0];
        assert!(relative_discrepancy(sigma, fd, 1e-3 * scale) < 1e-5, "seed {seed}: {sigma} vs {fd}");
    }
}

#[test]
fn entropy() {
    let sp = spec(Variant::Rate, Thermal::NonIsothermal);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = window(&mut rng, 3, true);
    let zero = TcrnnModel::zeros(sp.clone(), stats(true)).unwrap();
    assert_eq!(predict_entropy(&zero, &w).unwrap(), 0.0);

    for seed in 0..10 {
        let m = model(200 + seed, sp.clone());
        let w = window(&mut rng, 3, true);
        let z = infer_isv(&m, &w).unwrap();
        let eps = m.stats.strain.destandardize(&w.current.strain)[0];
        let temp = m.stats.temperature.as_ref().unwrap().destandardize(&[w.current.temperature.unwrap()])[0];
        let h = 1e-6 * m.stats.temperature_std().unwrap();
        let fd = -(physical_energy(&m, eps, Some(temp + h), &z) - physical_energy(&m, eps, Some(temp - h), &z))
            / (2.0 * h);
        let s = predict_entropy(&m, &w).unwrap();
        let scale = m.stats.energy().1 / m.stats.temperature_std().unwrap();
        assert!(relative_discrepancy(s, fd, 1e-3 * scale) < 1e-5, "{s} vs {fd}");

        let mut flat = m.clone();
        zero_energy_columns(&mut flat, 1..2);
        assert_eq!(predict_entropy(&flat, &w).unwrap(), 0.0);
    }

    let iso = model(1, spec(Variant::Rate, Thermal::Isothermal));
    assert!(predict_entropy(&iso, &window(&mut rng, 3, false)).is_err());
}

#[test]
fn exact_rate_trivial_cases() {
    let m = model(10, spec(Variant::Rate, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = window(&mut rng, 3, false);
    let mut zero = rates(&mut rng, 3, false);
    zero.history.iter_mut().for_each(|h| {
        h.strain[0] = 0.0;
        h.stress[0] = 0.0;
    });
    zero.current.strain[0] = 0.0;
    assert_eq!(isv_rate_exact(&m, &w, &zero).unwrap(), vec![0.0, 0.0]);

    let mut flat = m.clone();
    zero_head_weights(&mut flat);
    assert_eq!(isv_rate_exact(&flat, &w, &rates(&mut rng, 3, false)).unwrap(), vec![0.0, 0.0]);
    assert!(forward_all(&m, &TcrnnModel::plain(&w)).is_err());
}

/// Moves every standardized window input by `delta` times its standardized rate.
fn shift_window(m: &TcrnnModel, w: &SequenceWindow, r: &SequenceWindow, delta: f64) -> SequenceWindow {
    let s = &m.stats;
    let t_std = s.temperature.as_ref().map(|t| t.std[0]);
    let mv = |x: f64, rate: f64, std: f64| x + delta * rate / std;
    let mut out = w.clone();
    for (h, rh) in out.history.iter_mut().zip(&r.history) {
        h.strain[0] = mv(h.strain[0], rh.strain[0], s.strain.std[0]);
        h.stress[0] = mv(h.stress[0], rh.stress[0], s.stress.std[0]);
        if let (Some(t), Some(rt)) = (&mut h.temperature, rh.temperature) {
            *t = mv(*t, rt, t_std.unwrap());
        }
    }
    out.current.strain[0] = mv(out.current.strain[0], r.current.strain[0], s.strain.std[0]);
    if let (Some(t), Some(rt)) = (&mut out.current.temperature, r.current.temperature) {
        *t = mv(*t, rt, t_std.unwrap());
    }
    out
}

#[test]
fn exact_rate_matches_directional_difference() {
    for (seed, thermal) in (0..20).map(|s| (s, s % 2 == 1)) {
        let th = if thermal { Thermal::NonIsothermal } else { Thermal::Isothermal };
        let m = model(300 + seed, spec(Variant::Rate, th));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = window(&mut rng, 3, thermal);
        let r = rates(&mut rng, 3, thermal);
        let exact = isv_rate_exact(&m, &w, &r).unwrap();
        let delta = 1e-6;
        let zp = infer_isv(&m, &shift_window(&m, &w, &r, delta)).unwrap();
        let zm = infer_isv(&m, &shift_window(&m, &w, &r, -delta)).unwrap();
        for j in 0..2 {
            let fd = (zp[j] - zm[j]) / (2.0 * delta);
            assert!(relative_discrepancy(exact[j], fd, 1e-3) < 1e-4, "seed {seed}: {} vs {fd}", exact[j]);
        }
    }
}

#[test]
fn increment_trivial_cases_and_consistency() {
    let m = model(12, spec(Variant::Increment, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let w = window(&mut rng, 3, false);
    let (_, z, _) = isv_increment(&m, &w).unwrap();
    assert_eq!(z, infer_isv(&m, &w).unwrap());

    let mut flat = m.clone();
    zero_head_weights(&mut flat);
    assert_eq!(isv_increment(&flat, &w).unwrap().2, vec![0.0, 0.0]);

    // Memoryless cell with no stress input: identical steps give identical ISVs.
    let mut sp = spec(Variant::Increment, Thermal::Isothermal);
    sp.cell = CellKind::Vanilla;
    let mut v = model(14, sp);
    if let RecurrentCell::Vanilla(c) = &mut v.isv_cell {
        c.w_hh.data_mut().iter_mut().for_each(|x| *x = 0.0);
        let (r, cols) = c.w_xh.dims();
        for i in 0..r {
            c.w_xh.data_mut()[i * cols + 1] = 0.0;
        }
    }
    let step = StepState { strain: vec![0.4], stress: vec![-0.9], temperature: None };
    let constant =
        SequenceWindow { history: vec![step.clone(), step], current: CurrentStep { strain: vec![0.4], temperature: None } };
    assert_eq!(isv_increment(&v, &constant).unwrap().2, vec![0.0, 0.0]);

    let one = TcrnnSpec { rnn_steps: 1, ..spec(Variant::Increment, Thermal::Isothermal) };
    assert!(one.validate().is_err());
}

#[test]
fn dissipation() {
    let m = model(15, spec(Variant::Increment, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let w = window(&mut rng, 3, false);
    let dt = 0.5;
    let d = predict_dissipation(&m, &w, None, RateSource::Increment, dt).unwrap();

    let (_, z, dz) = isv_increment(&m, &w).unwrap();
    let h = 1e-6;
    let mut dot = 0.0;
    for j in 0..2 {
        let mut zp = z.clone();
        zp[j] += h;
        let mut zm = z.clone();
        zm[j] -= h;
        let dfdz = (free_energy(&m, &w.current.strain, None, &zp).unwrap()
            - free_energy(&m, &w.current.strain, None, &zm).unwrap())
            / (2.0 * h);
        dot += dfdz * dz[j] / dt;
    }
    let oracle = -m.stats.energy().1 * dot;
    assert!(relative_discrepancy(d, oracle, 1e-3 * m.stats.energy().1) < 1e-5, "{d} vs {oracle}");

    let mut flat = m.clone();
    zero_energy_columns(&mut flat, 1..3);
    assert_eq!(predict_dissipation(&flat, &w, None, RateSource::Increment, dt).unwrap(), 0.0);
    let mut frozen = m.clone();
    zero_head_weights(&mut frozen);
    assert_eq!(predict_dissipation(&frozen, &w, None, RateSource::Increment, dt).unwrap(), 0.0);

    assert!(predict_dissipation(&m, &w, None, RateSource::Increment, 0.0).is_err());
    assert!(predict_dissipation(&m, &w, None, RateSource::Exact, dt).is_err());
}

#[test]
fn forward_all_agrees_with_components() {
    for variant in [Variant::Rate, Variant::Increment] {
        let m = model(17, spec(variant, Thermal::NonIsothermal));
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let w = window(&mut rng, 3, true);
        let r = rates(&mut rng, 3, true);
        let input = ThermoInput { window: w.clone(), rates: Some(r.clone()), dt: 0.7 };
        let out = forward_all(&m, &input).unwrap();
        assert_eq!(out.stress, predict_stress(&m, &w).unwrap());
        assert_eq!(out.entropy.unwrap(), predict_entropy(&m, &w).unwrap());
        assert_eq!(out.isv, infer_isv(&m, &w).unwrap());
        let z = infer_isv(&m, &w).unwrap();
        let (mean_f, std_f) = m.stats.energy();
        let fb = free_energy(&m, &w.current.strain, w.current.temperature, &z).unwrap();
        assert_eq!(out.free_energy, std_f * fb + mean_f);
        let d = predict_dissipation(&m, &w, Some(&r), variant.into(), 0.7).unwrap();
        assert_eq!(out.dissipation.unwrap(), d);
        match variant {
            Variant::Rate => assert_eq!(out.isv_rate.unwrap(), isv_rate_exact(&m, &w, &r).unwrap()),
            Variant::Increment => {
                let dz = isv_increment(&m, &w).unwrap().2;
                assert_eq!(out.isv_rate.unwrap(), dz.iter().map(|x| x * (1.0 / 0.7)).collect::<Vec<_>>());
            }
        }
    }
}

#[test]
fn batched_outputs_equal_single_window_outputs() {
    let m = model(19, spec(Variant::Rate, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let inputs: Vec<ThermoInput> = (0..4)
        .map(|_| ThermoInput { window: window(&mut rng, 3, false), rates: Some(rates(&mut rng, 3, false)), dt: 1.0 })
        .collect();
    let batch = m.forward_batch(&inputs).unwrap();
    for (inp, out) in inputs.iter().zip(&batch) {
        let single = forward_all(&m, inp).unwrap();
        for (a, b) in [(out.stress[0], single.stress[0]), (out.dissipation.unwrap(), single.dissipation.unwrap())] {
            assert!(relative_discrepancy(a, b, 1e-300) < 1e-12);
        }
        assert_eq!(out.isv, single.isv);
    }
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let m = model(21, spec(Variant::Rate, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inputs: Vec<ThermoInput> = (0..2)
        .map(|_| ThermoInput { window: window(&mut rng, 3, false), rates: Some(rates(&mut rng, 3, false)), dt: 1.0 })
        .collect();
    let objective = |m: &TcrnnModel, g: &mut Graph, bound: &BoundTcrnn| -> Var {
        let n = m.build(g, bound, &inputs, Some(RateSource::Exact)).unwrap();
        let s = g.scale(n.stress, 1.0 / m.stats.stress.std[0]).unwrap();
        let d = g.scale(n.dissipation.unwrap(), 1.0 / m.stats.dissipation_scale()).unwrap();
        let sd = g.mul(s, d).unwrap();
        let t = g.add(sd, n.energy_bar).unwrap();
        let t = g.mul(t, t).unwrap();
        g.sum(t).unwrap()
    };
    let mut g = Graph::new();
    let bound = m.bind(&mut g).unwrap();
    let out = objective(&m, &mut g, &bound);
    let vars = bound.vars();
    let grads = g.backward(out, &vars).unwrap();
    let h = 1e-6;
    let eval = |m: &TcrnnModel| {
        let mut g = Graph::new();
        let bound = m.bind(&mut g).unwrap();
        let o = objective(m, &mut g, &bound);
        g.value(o).item()
    };
    let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
    for (k, (name, var)) in names.iter().zip(&vars).enumerate() {
        let analytic = grads.get(*var).unwrap().clone();
        for i in 0..analytic.len() {
            let mut plus = m.clone();
            plus.named_params_mut()[k].1.data_mut()[i] += h;
            let mut minus = m.clone();
            minus.named_params_mut()[k].1.data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(relative_discrepancy(a, fd, 1e-3) < 1e-4, "{name}[{i}]: {a} vs {fd}");
        }
    }
}

/// Windows along a path whose inputs all move at constant physical rates.
fn ramp(m: &TcrnnModel, end: f64, dt: f64, r: &SequenceWindow, base: &SequenceWindow) -> SequenceWindow {
    let s = m.spec.rnn_steps;
    let mut w = base.clone();
    for (k, h) in w.history.iter_mut().enumerate() {
        let t = end - (s - 1 - k) as f64 * dt;
        h.strain[0] = base.history[k].strain[0] + t * r.history[0].strain[0] / m.stats.strain.std[0];
        h.stress[0] = base.history[k].stress[0] + t * r.history[0].stress[0] / m.stats.stress.std[0];
    }
    w.current.strain[0] = base.current.strain[0] + end * r.current.strain[0] / m.stats.strain.std[0];
    w
}

fn observed_order(errors: &[f64]) -> f64 {
    let orders: Vec<f64> = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    orders.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[test]
fn path_difference_of_isv_converges_to_exact_rate() {
    let m = model(23, spec(Variant::Rate, Thermal::Isothermal));
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut r = rates(&mut rng, 3, false);
    let (de, ds) = (r.current.strain[0], r.history[0].stress[0]);
    for h in &mut r.history {
        h.strain[0] = de;
        h.stress[0] = ds;
    }
    let base = window(&mut rng, 3, false);
    let mut base = base;
    let e0 = base.current.strain[0];
    base.history.iter_mut().for_each(|h| h.strain[0] = e0);
    let s0 = base.history[0].stress[0];
    base.history.iter_mut().for_each(|h| h.stress[0] = s0);

    let mut errors = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3] {
        let now = ramp(&m, 1.0, dt, &r, &base);
        let before = ramp(&m, 1.0 - dt, dt, &r, &base);
        let exact = isv_rate_exact(&m, &now, &r).unwrap();
        let zn = infer_isv(&m, &now).unwrap();
        let zp = infer_isv(&m, &before).unwrap();
        let err = (0..2).map(|j| ((zn[j] - zp[j]) / dt - exact[j]).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    assert!(observed_order(&errors) >= 0.9, "{errors:?}");
}

#[test]
fn increment_rate_converges_for_memoryless_cell() {
    let mut sp = spec(Variant::Increment, Thermal::Isothermal);
    sp.cell = CellKind::Vanilla;
    let mut m = model(25, sp);
    if let RecurrentCell::Vanilla(VanillaRnnCell { w_hh, w_xh, .. }) = &mut m.isv_cell {
        w_hh.data_mut().iter_mut().for_each(|x| *x = 0.0);
        let (rows, cols) = w_xh.dims();
        for i in 0..rows {
            w_xh.data_mut()[i * cols + 1] = 0.0;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let mut r = rates(&mut rng, 3, false);
    let de = r.current.strain[0];
    r.history.iter_mut().for_each(|h| h.strain[0] = de);
    let base = window(&mut rng, 3, false);
    let mut errors = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3] {
        let w = ramp(&m, 1.0, dt, &r, &base);
        let mut b = w.clone();
        let e = w.current.strain[0];
        b.history.iter_mut().enumerate().for_each(|(k, h)| h.strain[0] = e - (2 - k) as f64 * dt * de / m.stats.strain.std[0]);
        let exact = isv_rate_exact(&m, &b, &r).unwrap();
        let dz = isv_increment(&m, &b).unwrap().2;
        errors.push((0..2).map(|j| (dz[j] / dt - exact[j]).abs()).fold(0.0, f64::max));
    }
    assert!(observed_order(&errors) >= 0.9, "{errors:?}");
}

#[test]
fn standardized_quantities_are_invariant_to_stress_units() {
    let path = generate_path(&ElastoPlasticParams::default(), &LoadingProgram::benchmark(5e-4)).unwrap();
    for (c, exact) in [(8.0, true), (3.7, false)] {
        let mut scaled = path.clone();
        scaled.stress.iter_mut().flatten().for_each(|s| *s *= c);
        let a = fit_stats(std::slice::from_ref(&path), false).unwrap();
        let b = fit_stats(std::slice::from_ref(&scaled), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let ma = TcrnnModel::init(&mut rng, spec(Variant::Rate, Thermal::Isothermal), a).unwrap();
        let mut mb = ma.clone();
        mb.stats = b;
        for n in [5, 17, 40] {
            let raw = SequenceWindow {
                history: (n - 2..n)
                    .map(|k| StepState { strain: path.strain[k].clone(), stress: path.stress[k].clone(), temperature: None })
                    .collect(),
                current: CurrentStep { strain: path.strain[n].clone(), temperature: None },
            };
            let mut raw_b = raw.clone();
            raw_b.history.iter_mut().for_each(|h| h.stress[0] *= c);
            let wa = ma.standardize_window(&raw).unwrap();
            let wb = mb.standardize_window(&raw_b).unwrap();
            let (za, zb) = (infer_isv(&ma, &wa).unwrap(), infer_isv(&mb, &wb).unwrap());
            if exact {
                assert_eq!(wa, wb);
                assert_eq!(za, zb);
            } else {
                for (x, y) in za.iter().zip(&zb) {
                    assert!(relative_discrepancy(*x, *y, 1e-300) < 1e-12);
                }
            }
        }
    }
}

#[test]
fn constant_temperature_reduces_to_isothermal() {
    let iso = model(28, spec(Variant::Rate, Thermal::Isothermal));
    let mut th = TcrnnModel::zeros(spec(Variant::Rate, Thermal::NonIsothermal), stats(true)).unwrap();
    // Copy weights, inserting zero columns for temperature inputs.
    match (&iso.isv_cell, &mut th.isv_cell) {
        (RecurrentCell::Gru(a), RecurrentCell::Gru(b)) => {
            let widen = |src: &Value, dst: &mut Value| {
                let (r, c) = src.dims();
                for i in 0..r {
                    for j in 0..c {
                        dst.data_mut()[i * (c + 1) + j] = src.get(i, j);
                    }
                }
            };
            let GruCell { w_xr, w_xu, w_xc, .. } = b;
            widen(&a.w_xr, w_xr);
            widen(&a.w_xu, w_xu);
            widen(&a.w_xc, w_xc);
            b.w_hr = a.w_hr.clone();
            b.w_hu = a.w_hu.clone();
            b.w_hc = a.w_hc.clone();
            b.b_r = a.b_r.clone();
            b.b_u = a.b_u.clone();
            b.b_c = a.b_c.clone();
            b.b_h = a.b_h.clone();
            b.head = a.head.clone();
        }
        _ => unreachable!(),
    }
    for (la, lb) in iso.energy_head.layers().iter().zip(th.energy_head.layers_mut()) {
        lb.b = la.b.clone();
        if la.inputs() == lb.inputs() {
            lb.w = la.w.clone();
        } else {
            let (r, c) = la.w.dims();
            for i in 0..r {
                lb.w.data_mut()[i * (c + 1)] = la.w.get(i, 0);
                for j in 1..c {
                    lb.w.data_mut()[i * (c + 1) + j + 1] = la.w.get(i, j);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..5 {
        let w = window(&mut rng, 3, false);
        let mut wt = w.clone();
        wt.history.iter_mut().for_each(|h| h.temperature = Some(0.3));
        wt.current.temperature = Some(0.3);
        let r = rates(&mut rng, 3, false);
        let mut rt = r.clone();
        rt.history.iter_mut().for_each(|h| h.temperature = Some(0.0));
        rt.current.temperature = Some(0.0);
        let a = forward_all(&iso, &ThermoInput { window: w, rates: Some(r), dt: 1.0 }).unwrap();
        let b = forward_all(&th, &ThermoInput { window: wt, rates: Some(rt), dt: 1.0 }).unwrap();
        assert_eq!(a.stress, b.stress);
        assert_eq!(a.free_energy, b.free_energy);
        assert_eq!(a.dissipation, b.dissipation);
        assert_eq!(a.isv, b.isv);
        assert_eq!(b.entropy, Some(0.0));
    }
}

#[test]
fn canonical_parameter_names() {
    let m = model(30, spec(Variant::Rate, Thermal::Isothermal));
    let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "isv.W_hr");
    assert!(names.contains(&"isv.W_hz".to_string()) && names.contains(&"isv.b_z".to_string()));
    assert_eq!(names.last().unwrap(), "energy.layer1.b");
    let mut g = Graph::new();
    let bound = m.bind(&mut g).unwrap();
    let vars = bound.vars();
    for ((_, v), var) in m.named_params().into_iter().zip(vars) {
        assert_eq!(g.value(var), v);
    }
}
