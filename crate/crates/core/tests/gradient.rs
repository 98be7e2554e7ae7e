use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenopt::gradient::{distributed_gradient, eval_dependent, gradient, plan_distribution, ConstraintMatrix, Partials};

/// F(x, z) = Σ c_i sin x_i + Σ d_j z_j² + e (Σ x)(Σ z)
struct Smooth {
    c: Vec<f64>,
    d: Vec<f64>,
    e: f64,
}

impl Smooth {
    fn value(&self, x: &[f64], z: &[f64]) -> f64 {
        let sx: f64 = x.iter().sum();
        let sz: f64 = z.iter().sum();
        self.c.iter().zip(x).map(|(c, x)| c * x.sin()).sum::<f64>()
            + self.d.iter().zip(z).map(|(d, z)| d * z * z).sum::<f64>()
            + self.e * sx * sz
    }

    fn partials(&self, x: &[f64], z: &[f64]) -> Partials {
        let sx: f64 = x.iter().sum();
        let sz: f64 = z.iter().sum();
        let dx = self.c.iter().zip(x).map(|(c, x)| c * x.cos() + self.e * sz).collect();
        let dz = self.d.iter().zip(z).map(|(d, z)| 2.0 * d * z + self.e * sx).collect();
        (dx, dz)
    }
}

fn instance(rng: &mut ChaCha8Rng) -> (ConstraintMatrix, Smooth, Vec<f64>) {
    let rows = rng.random_range(1..=20);
    let m = rng.random_range(1..=10);
    let a = (0..rows * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cm = ConstraintMatrix::new(rows, m, a).unwrap();
    let f = Smooth {
        c: (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
        d: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
        e: rng.random_range(-0.5..0.5),
    };
    let x = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    (cm, f, x)
}

fn central_difference(f: &Smooth, cm: &ConstraintMatrix, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let g = |x: &[f64]| f.value(x, &eval_dependent(cm, x, None).unwrap());
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (g(&up) - g(&down)) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|b| b * b).sum::<f64>().sqrt().max(1.0);
    diff / scale
}

#[test]
fn chain_rule_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..100 {
        let (cm, f, x) = instance(&mut rng);
        let g = gradient(|x, z| f.partials(x, z), &cm, &x).unwrap();
        let fd = central_difference(&f, &cm, &x);
        let err = relative_error(&g, &fd);
        assert!(err <= 1e-5, "instance {k}: {}x{} error {err:e}", cm.rows(), cm.dim_m());
    }
}

#[test]
fn zero_constraints_give_direct_partials() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (cm, f, x) = instance(&mut rng);
        let zero = ConstraintMatrix::zeros(cm.rows(), cm.dim_m()).unwrap();
        let z = eval_dependent(&zero, &x, None).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let g = gradient(|x, z| f.partials(x, z), &zero, &x).unwrap();
        assert_eq!(g, f.partials(&x, &z).0);
    }
}

#[test]
fn distributed_gradient_equals_single_machine() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let (cm, f, x) = instance(&mut rng);
        let single = gradient(|x, z| f.partials(x, z), &cm, &x).unwrap();
        for q in 1..=cm.rows().max(cm.dim_m()) {
            let plan = plan_distribution(&cm, q).unwrap();
            let d = distributed_gradient(|x, z| f.partials(x, z), &cm, &x, &plan).unwrap();
            for (a, b) in d.iter().zip(&single) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "q = {q}");
            }
        }
    }
}

#[test]
fn constraint_csv_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cm, _, _) = instance(&mut rng);
    assert_eq!(ConstraintMatrix::parse_csv(&cm.to_csv()).unwrap(), cm);
}
