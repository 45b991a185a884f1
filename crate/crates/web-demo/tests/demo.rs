use vts_web_demo::{attention_map, center_distances, noisy_pr};

#[test]
fn center_heatmap_is_symmetric_and_separated() {
    let d = center_distances(10, 16, 0).unwrap();
    for i in 0..10 {
        assert_eq!(d[i * 10 + i], 0);
        for j in 0..10 {
            assert_eq!(d[i * 10 + j], d[j * 10 + i]);
            if i != j {
                assert!(d[i * 10 + j] >= 8);
            }
        }
    }
    assert!(center_distances(40, 16, 0).is_err());
}

#[test]
fn noise_degrades_retrieval() {
    let clean = noisy_pr(8, 16, 40, 0.0, 1).unwrap();
    assert_eq!(clean.len(), 22);
    assert_eq!(clean[0], 1.0);
    let noisy = noisy_pr(8, 16, 40, 0.3, 1).unwrap();
    assert!(noisy[0] < clean[0]);
    let random = noisy_pr(8, 16, 40, 0.5, 1).unwrap();
    assert!(random[0] < 0.3, "{}", random[0]);
    assert!(noisy_pr(8, 16, 40, 1.5, 1).is_err());
}

#[test]
fn attention_map_is_a_distribution_over_patches() {
    let m = attention_map(3, 1, 0, 2).unwrap();
    assert_eq!(m.len(), 16);
    let avg = attention_map(3, 0, 4, 2).unwrap();
    let s: f32 = avg.iter().sum();
    // the class token also attends to itself, so patches get less than 1
    assert!(s > 0.0 && s < 1.0);
    assert!(attention_map(3, 2, 0, 2).is_err());
}
