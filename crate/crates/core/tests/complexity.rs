use bottomup::bench::{counted_cca, counted_quadratic, quadratic_cost_model, run_scaling, Kernel};
use bottomup::cca::cca_cost_model;
use bottomup::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cca_count(h: usize, w: usize, c: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let k = Tensor::uniform(&[h, w, c], -1.0, 1.0, &mut rng);
    let q = Tensor::uniform(&[w, c], -1.0, 1.0, &mut rng);
    let mut macs = 0;
    counted_cca(&k, &q, &k, &mut macs);
    macs
}

fn quadratic_count(h: usize, w: usize, c: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let k = Tensor::uniform(&[h, w, c], -1.0, 1.0, &mut rng);
    let mut macs = 0;
    counted_quadratic(&k, &k, &mut macs);
    macs
}

#[test]
fn cca_count_is_linear_in_each_dimension() {
    let base = cca_count(4, 6, 8);
    for m in [2, 3, 5] {
        assert_eq!(cca_count(4 * m, 6, 8), base * m as u64);
        assert_eq!(cca_count(4, 6 * m, 8), base * m as u64);
        assert_eq!(cca_count(4, 6, 8 * m), base * m as u64);
    }
    for (h, w, c) in [(1, 1, 1), (7, 3, 5), (32, 96, 64)] {
        assert_eq!(cca_count(h, w, c), cca_cost_model(h, w, c));
    }
}

#[test]
fn quadratic_count_grows_with_square_of_pixels() {
    let base = quadratic_count(4, 3, 5);
    for m in [2u64, 3] {
        assert_eq!(quadratic_count(4 * m as usize, 3, 5), base * m * m);
        assert_eq!(quadratic_count(4, 3 * m as usize, 5), base * m * m);
        assert_eq!(quadratic_count(4, 3, 5 * m as usize), base * m);
    }
    for (h, w, c) in [(1, 1, 1), (5, 7, 3), (9, 4, 16)] {
        assert_eq!(quadratic_count(h, w, c), quadratic_cost_model(h, w, c));
    }
}

#[test]
fn scaling_rows_report_runtime_counts() {
    let sizes = [(4, 8, 4), (8, 8, 4), (16, 8, 4)];
    for kernel in [Kernel::Cca, Kernel::Quadratic] {
        let rows = run_scaling(kernel, &sizes, 3, 1).unwrap();
        for (r, &(h, w, c)) in rows.iter().zip(&sizes) {
            assert_eq!(r.op_count, kernel.cost_model(h, w, c));
            assert!(r.median_ns > 0);
        }
    }
}
