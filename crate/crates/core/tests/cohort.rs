use eqforge::design::{build_target, EqDesignConfig, EqFilter};
use eqforge::estimators::ls_deconvolve;
use eqforge::metrics::{log_spectral_distance, EvalSettings};
use eqforge::signal::{convolve_all, magnitude_response, ImpulseResponse, DEFAULT_N_FFT};
use eqforge::simulation::{
    aided_response, desired_response, device_gain, synth_dummy_head, Cohort, Condition, EarDataset, PreparedCohort,
    SynthCohortParams,
};
use eqforge::{Cohort64, EarDataset64};

fn default_prepared() -> PreparedCohort<f64> {
    let cohort = Cohort64::synthetic(&SynthCohortParams::default()).unwrap();
    PreparedCohort::new(cohort, 32, 0.0)
}

fn cfg(delay: usize) -> EqDesignConfig {
    EqDesignConfig::default().with_delay(delay)
}

#[test]
fn aided_minus_leak_is_the_device_chain() {
    let prep = default_prepared();
    for ear in &prep.cohort().subjects {
        for delay in [32, 96] {
            let a = prep
                .design(&ear.subject_id, &ear.subject_id, Condition::ModelBased, &cfg(delay))
                .unwrap();
            let g = device_gain(delay, 16_000).unwrap();
            let aided = aided_response(ear, &g, &a).unwrap();
            let chain = convolve_all(&[&ear.h_m, &g, &a.as_impulse_response(16_000).unwrap(), &ear.d_true]).unwrap();
            // With d_G >= L_d the advance drops only leading zeros.
            assert!(chain.samples()[..32].iter().all(|&v| v == 0.0));
            let device = &chain.samples()[32..];
            for k in 0..aided.len().max(device.len()) {
                let leak = ear.h_occ.samples().get(k).copied().unwrap_or(0.0);
                let dev = device.get(k).copied().unwrap_or(0.0);
                let got = aided.samples().get(k).copied().unwrap_or(0.0);
                assert_eq!(got, dev + leak, "{} k={k}", ear.subject_id);
            }
        }
    }
}

#[test]
fn desired_magnitude_ignores_device_delay() {
    let prep = default_prepared();
    let ear = &prep.cohort().subjects[3];
    let open = magnitude_response(&ear.h_open, DEFAULT_N_FFT).unwrap();
    for d in [0, 1, 16, 96] {
        let desired = desired_response(ear, &device_gain(d, 16_000).unwrap()).unwrap();
        let m = magnitude_response(&desired, DEFAULT_N_FFT).unwrap();
        assert!(log_spectral_distance(&m, &open, (100.0, 7000.0)).unwrap() < 1e-9);
    }
}

#[test]
fn pure_delay_target_matches_deconvolution() {
    let prep = default_prepared();
    let rtf = prep.individual(0).unwrap();
    for d in [0, 1, 16, 96] {
        let g = device_gain::<f64>(d, 16_000).unwrap();
        let fast = build_target(&rtf.open, &rtf.occluded, &g).unwrap();
        let slow = ls_deconvolve(&g, &rtf.occluded.coefficients, rtf.occluded.len(), 0.0).unwrap();
        for (i, t) in fast.iter().enumerate() {
            let want = rtf.open.coefficients[i] - slow[i];
            assert!((t - want).abs() <= 1e-12 * (1.0 + want.abs()), "d={d} i={i}");
        }
    }
}

fn identical_cohort(n: usize) -> Cohort<f64> {
    let base = synth_dummy_head::<f64>(&SynthCohortParams::default()).unwrap();
    let twin = |id: &str| EarDataset64 {
        subject_id: id.to_string(),
        d_inear: base.d_true.clone(),
        d_model: base.d_true.clone(),
        ..base.clone()
    };
    let subjects = (0..n).map(|i| twin(&format!("E{i}"))).collect();
    Cohort::new(subjects, Some(twin("DH"))).unwrap()
}

#[test]
fn all_conditions_collapse_on_identical_ears() {
    let prep = PreparedCohort::new(identical_cohort(4), 32, 0.0);
    for delay in [0, 96] {
        let reference = prep.design("E2", "E2", Condition::Optimal, &cfg(delay)).unwrap();
        for c in Condition::ALL {
            let f = prep.design("E2", "E2", c, &cfg(delay)).unwrap();
            let scale = reference.coefficients.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in f.coefficients.iter().zip(&reference.coefficients) {
                assert!((x - y).abs() <= 1e-10 * scale.max(1.0), "{c} d_G={delay}");
            }
        }
    }
}

#[test]
fn perfect_knowledge_is_near_transparent_when_delay_covers_latency() {
    let prep = PreparedCohort::new(identical_cohort(3), 32, 0.0);
    let eval = EvalSettings::default();
    let run = prep.run_condition("E0", Condition::Optimal, &cfg(96), &eval).unwrap();
    assert!(run.report.lsd_db < 0.5, "{}", run.report.lsd_db);
}

#[test]
fn duplicating_the_test_subject_changes_pooled_designs() {
    let cohort = Cohort64::synthetic(&SynthCohortParams::default()).unwrap();
    let mut dup = cohort.clone();
    let mut twin = dup.subjects[4].clone();
    twin.subject_id = "S05b".into();
    dup.subjects.push(twin);
    let a = PreparedCohort::new(cohort, 32, 0.0);
    let b = PreparedCohort::new(dup, 32, 0.0);
    for c in [
        Condition::GenericAV,
        Condition::PracticalModelBased,
        Condition::PracticalOptimal,
    ] {
        let fa = a.design("S05", "S05", c, &cfg(16)).unwrap();
        let fb = b.design("S05", "S05", c, &cfg(16)).unwrap();
        assert_ne!(fa.coefficients, fb.coefficients, "{c}");
    }
}

#[test]
fn cohort_level_orderings() {
    let prep = default_prepared();
    let eval = EvalSettings::default();
    let mean = |c: Condition| {
        let ids: Vec<String> = prep.cohort().subjects.iter().map(|e| e.subject_id.clone()).collect();
        ids.iter()
            .map(|s| prep.run_condition(s, c, &cfg(96), &eval).unwrap().report.lsd_db)
            .sum::<f64>()
            / ids.len() as f64
    };
    let optimal = mean(Condition::Optimal);
    let dummy = mean(Condition::GenericDH);
    let av = mean(Condition::GenericAV);
    let po = mean(Condition::PracticalOptimal);
    let pmb = mean(Condition::PracticalModelBased);
    assert!(optimal < dummy);
    assert!((pmb - po).abs() < av - po);
}

#[test]
fn muted_device_on_f32_cohort() {
    let cohort = Cohort::<f32>::synthetic(&SynthCohortParams::default()).unwrap();
    let g = device_gain::<f32>(16, 16_000).unwrap();
    for ear in &cohort.subjects {
        let aided = aided_response(ear, &g, &EqFilter::zeros(cfg(16))).unwrap();
        assert_eq!(&aided.samples()[..ear.h_occ.len()], ear.h_occ.samples());
    }
}

#[test]
fn f32_and_f64_designs_agree_loosely() {
    let params = SynthCohortParams {
        n_subjects: 3,
        ..Default::default()
    };
    let p64 = PreparedCohort::new(Cohort::<f64>::synthetic(&params).unwrap(), 32, 0.0);
    let p32 = PreparedCohort::new(Cohort::<f32>::synthetic(&params).unwrap(), 32, 0.0f32);
    let eval = EvalSettings::default();
    let a = p64.run_condition("S01", Condition::Optimal, &cfg(96), &eval).unwrap();
    let b = p32.run_condition("S01", Condition::Optimal, &cfg(96), &eval).unwrap();
    assert!(
        (a.report.lsd_db - b.report.lsd_db).abs() < 0.5,
        "{} vs {}",
        a.report.lsd_db,
        b.report.lsd_db
    );
}

#[test]
fn rate_mismatch_is_rejected() {
    let ear = Cohort64::synthetic(&SynthCohortParams::default()).unwrap().subjects[0].clone();
    let other = ImpulseResponse::<f64>::delta(48_000);
    let res = EarDataset::new(
        "x".into(),
        ear.h_m.clone(),
        ear.h_open.clone(),
        ear.h_occ.clone(),
        other,
        ear.d_inear.clone(),
        ear.d_model.clone(),
    );
    assert!(res.is_err());
}
