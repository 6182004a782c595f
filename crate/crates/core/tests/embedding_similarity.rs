use apmae::mae::{embed_all, train, MaeConfig, MaeParams};
use apmae::motifs::{motif_corpus, Motif};

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn same_motif_pairs_are_more_similar_than_mixed_pairs() {
    let cfg = MaeConfig {
        pattern_size: 16,
        total_batches: 300,
        ..MaeConfig::tiny()
    };
    let mut params = MaeParams::init(&cfg, 0).unwrap();
    train(&mut params, &motif_corpus(&Motif::ALL, 200, 16, 1)).unwrap();

    let pairs = 100;
    let band = motif_corpus(&[Motif::Band], 2 * pairs, 16, 2);
    let blocks = motif_corpus(&[Motif::Blocks], 2 * pairs, 16, 3);
    let eb = embed_all(&params, &band).unwrap();
    let ek = embed_all(&params, &blocks).unwrap();
    let same: f64 = (0..pairs)
        .map(|i| (cosine(&eb[2 * i], &eb[2 * i + 1]) + cosine(&ek[2 * i], &ek[2 * i + 1])) / 2.0)
        .sum::<f64>()
        / pairs as f64;
    let mixed: f64 = (0..pairs).map(|i| cosine(&eb[2 * i], &ek[2 * i])).sum::<f64>() / pairs as f64;
    assert!(same > mixed, "same-motif {same:.4} vs mixed {mixed:.4}");
}
