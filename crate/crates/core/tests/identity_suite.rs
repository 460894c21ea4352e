use qstat_core::identity::{check_qfdt, generalized_identities};
use qstat_core::{check_identity, CheckOptions, ModelContext, ModelSpec};

fn models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::TwoLevel { epsilon: 1.0 },
        ModelSpec::TruncatedOscillator {
            dim: 20,
            omega: 1.0,
            zero_point: false,
        },
        ModelSpec::PerturbedOscillator {
            dim: 20,
            omega: 1.0,
            coupling: 1.0,
        },
        ModelSpec::FermionicModes {
            energies: vec![0.5, 1.0, 1.5],
            interaction: 1.0,
        },
    ]
}

#[test]
fn every_identity_passes_on_the_model_grid() {
    let opts = CheckOptions::default();
    let mut failures = Vec::new();
    let mut count = 0;
    for spec in models() {
        let model = spec.instantiate(0).unwrap();
        for beta in [0.1, 1.0, 10.0] {
            let lambda = vec![0.3];
            let ctx = match &model.number {
                Some(n) => ModelContext::GrandCanonical {
                    hamiltonian: model.hamiltonian.clone(),
                    number: n.clone(),
                    beta,
                    mu: 0.4,
                    lambda: lambda.clone(),
                },
                None => ModelContext::Canonical {
                    hamiltonian: model.hamiltonian.clone(),
                    beta,
                    lambda: lambda.clone(),
                },
            };
            let ensemble = ctx.spec().unwrap();
            let mut ids = ctx.native_identities();
            ids.extend(generalized_identities(ensemble.n_observables(), ensemble.n_lambda()));
            for id in ids {
                let r = check_identity(id, &ctx, &opts).unwrap();
                count += 1;
                if !r.pass {
                    failures.push(format!("{} beta={beta} {r:?}", spec.kind()));
                }
            }
            for a in &model.observables {
                for dir in ctx.directions() {
                    let r = check_qfdt(a, &ensemble, &dir, &opts).unwrap();
                    count += 1;
                    if !r.pass {
                        failures.push(format!("{} beta={beta} {r:?}", spec.kind()));
                    }
                }
            }
        }
    }
    assert!(failures.is_empty(), "{} of {count} failed:\n{}", failures.len(), failures.join("\n"));
}
