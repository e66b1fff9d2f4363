// temporary diagnostic, not part of the suite
use spanre::config::{ModelConfig, TrainConfig};
use spanre::data::{load_corpus, LoadOptions, RelationSchema};
use spanre::model::Pass;
use spanre::tagger::{extract_triplets, predict_objrel_tags, predict_subject_tags};
use spanre::attention::fuse;
use spanre::encoder::encode;
use spanre::train::train;

#[test]
#[ignore]
fn diagnose_overfit() {
    let jsonl = std::fs::read_to_string("/tmp/smoke/c50.jsonl").unwrap();
    let mut schema = RelationSchema::new(vec!["owns".into(), "runs".into(), "holds".into()]).unwrap();
    let (corpus, _) = load_corpus(jsonl.as_bytes(), &mut schema, LoadOptions::default()).unwrap();

    let dx = 32;
    let cfg = TrainConfig {
        base_lr: 0.005,
        warmup_steps: 100,
        epochs: 200,
        batch_size: 2,
        seed: 42,
        patience: 200,
        model: ModelConfig {
            d_word: dx,
            d_char: 12,
            d_c: 8,
            d_x: dx,
            k_att: 16,
            subject_sample_len: 4,
            t_max: 120,
            dropout_p: 0.1,
            ..ModelConfig::default()
        },
    };
    let result = train(&corpus, None, &schema, &cfg, 1, None).unwrap();
    let params = result.best;
    println!("best f1 {} at {}", result.best_f1, result.best_epoch);

    let mut sub_hit = 0usize;
    let mut sub_total = 0usize;
    let mut obj_hit = 0usize;
    let mut obj_total = 0usize;
    for (i, ex) in corpus.iter().enumerate() {
        let ids = params.sentence_ids(&ex.tokens);
        let gold = ex.resolve(&schema).unwrap();
        let mut pass = Pass::eval(&params);
        let p = encode(&mut pass, &ids).unwrap();
        let tags = predict_subject_tags(&mut pass, p).unwrap();
        let gold_subjects: std::collections::BTreeSet<spanre::Span> =
            gold.iter().map(|t| t.subject).collect();
        for s in &gold_subjects {
            sub_total += 1;
            if tags.start[s.start] > 0.5 && tags.end[s.end] > 0.5 {
                sub_hit += 1;
            }
        }
        for s in &gold_subjects {
            let fused = fuse(&mut pass, p, *s).unwrap();
            let ot = predict_objrel_tags(&mut pass, fused).unwrap();
            for t in gold.iter().filter(|t| t.subject == *s) {
                obj_total += 1;
                let ps = ot.start[t.object.start * ot.r + t.relation];
                let pe = ot.end[t.object.end * ot.r + t.relation];
                if ps > 0.5 && pe > 0.5 {
                    obj_hit += 1;
                }
            }
        }
        if i < 6 {
            let got = extract_triplets(&params, &ids).unwrap();
            let want: std::collections::BTreeSet<_> = gold.iter().copied().collect();
            println!(
                "sent {} T={} gold {} pred {} correct {}",
                i,
                ids.len(),
                want.len(),
                got.len(),
                got.intersection(&want).count()
            );
            let starts: Vec<String> = tags.start.iter().map(|v| format!("{:.2}", v)).collect();
            let ends: Vec<String> = tags.end.iter().map(|v| format!("{:.2}", v)).collect();
            println!("  sub start {:?}", starts);
            println!("  sub end   {:?}", ends);
            println!("  gold subjects {:?}", gold_subjects);
        }
    }
    println!(
        "gold-subject tag accuracy {}/{}  objrel tag accuracy (teacher forced) {}/{}",
        sub_hit, sub_total, obj_hit, obj_total
    );
}
