use cookalign_autograd::{Graph, Matrix};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c).prop_map(move |d| Matrix::from_vec(r, c, d))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(m in matrix(6, 8)) {
        let mut g = Graph::new();
        let x = g.constant(m);
        let s = g.softmax_rows(x);
        let v = g.value(s);
        for r in 0..v.rows() {
            prop_assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(v.row(r).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm(m in matrix(6, 8)) {
        prop_assume!((0..m.rows()).all(|r| m.row(r).iter().any(|x| x.abs() > 1e-3)));
        let n = m.l2_normalize_rows();
        for r in 0..n.rows() {
            prop_assert!((n.row(r).iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_products_agree(a in matrix(5, 4), seed in prop::collection::vec(-2.0f64..2.0, 20)) {
        let b = Matrix::from_vec(5, a.cols(), seed.iter().cycle().take(5 * a.cols()).copied().collect());
        let direct = a.matmul(&b.transpose());
        prop_assert_eq!(a.matmul_bt(&b), direct);
        let at = a.transpose().matmul(&b.transpose().transpose().slice_rows(0, a.rows()));
        prop_assert!(a.matmul_at(&b.slice_rows(0, a.rows())).zip_map(&at, |x, y| (x - y).abs()).data().iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn layer_norm_centers_and_scales(m in matrix(4, 8)) {
        prop_assume!(m.cols() > 1);
        let mut g = Graph::new();
        let x = g.constant(m);
        let y = g.layer_norm(x);
        let v = g.value(y);
        for r in 0..v.rows() {
            let mean = v.row(r).iter().sum::<f64>() / v.cols() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }
}
