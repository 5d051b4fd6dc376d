use std::f64::consts::PI;

use ccrl::agents::{ReplayBuffer, TransitionTuple};
use ccrl::clustering::{allocate_batch, row_normalize, similarity, ResponsibilityMatrix};
use ccrl::diffcore::Matrix;
use ccrl::envs::wrap_angle;
use proptest::prelude::*;

fn simplex_rows(n: usize, c: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(0.001f64..1.0, n * c).prop_map(move |w| {
        Matrix::from_fn(n, c, |i, j| {
            let row = &w[i * c..(i + 1) * c];
            row[j] / row.iter().sum::<f64>()
        })
    })
}

proptest! {
    #[test]
    fn allocation_sums_to_batch(w in prop::collection::vec(0.0f64..1.0, 1..40), b in 1usize..300) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-6);
        let row: Vec<f64> = w.iter().map(|x| x / total).collect();
        let alloc = allocate_batch(&row, b).unwrap();
        prop_assert_eq!(alloc.iter().sum::<usize>(), b);
        for (k, p) in alloc.iter().zip(&row) {
            prop_assert!((*k as f64 - b as f64 * p).abs() < 1.0);
        }
    }

    #[test]
    fn similarity_kernel_shape(v in (1usize..8, 1usize..5).prop_flat_map(|(n, c)| simplex_rows(n, c))) {
        let n = v.rows();
        let k = similarity(&ResponsibilityMatrix::new(v).unwrap());
        let k_hat = row_normalize(&k).unwrap();
        for i in 0..n {
            prop_assert_eq!(k.row(i)[i], 1.0);
            for j in 0..n {
                prop_assert_eq!(k.row(i)[j], k.row(j)[i]);
                prop_assert!(k.row(i)[j] > 0.0 && k.row(i)[j] <= 1.0);
            }
            prop_assert!((k_hat.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrapped_angles_stay_in_range(theta in -1e4f64..1e4) {
        let w = wrap_angle(theta);
        prop_assert!((-PI..=PI).contains(&w));
        prop_assert!(((theta - w) / (2.0 * PI) - ((theta - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }

    #[test]
    fn ring_buffer_keeps_latest(cap in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(cap, 1, 1).unwrap();
        for i in 0..pushes {
            buf.push(&TransitionTuple {
                state: vec![i as f64],
                action: vec![0.0],
                reward: i as f64,
                next_state: vec![0.0],
                terminal: false,
            }).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
        let mut rewards: Vec<f64> = (0..buf.len()).map(|i| buf.get(i).unwrap().reward).collect();
        rewards.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(rewards, expected);
    }
}
