//! Turning raw model outputs into a relative loss: exact-match correctness,
//! embedding distance, or a precomputed value.

use pacroute::data::{binary_loss, cosine_loss, resolve_loss, LossKind, LossSpec, Record};

fn main() -> pacroute::Result<()> {
    println!(
        "binary, thinking right and cheap wrong: {}",
        binary_loss("42", "41", "42")?
    );
    println!(
        "binary, both right:                     {}",
        binary_loss("42", " 42 ", "42")?
    );
    println!(
        "binary, thinking wrong:                 {}",
        binary_loss("40", "41", "42")?
    );
    println!(
        "cosine (1,0) vs (1,1):                  {:.5}",
        cosine_loss(&[1.0, 0.0], &[1.0, 1.0])?
    );
    println!(
        "cosine opposite vectors:                {:.5}",
        cosine_loss(&[1.0, 0.0], &[-1.0, 0.0])?
    );

    let record = Record {
        id: "q17".into(),
        group_label: Some("algebra".into()),
        uncertainty: 0.31,
        thinking_answer: Some("x = 3".into()),
        cheap_answer: Some("x = 2".into()),
        gold_answer: Some("x = 3".into()),
        thinking_embedding: Some(vec![0.2, 0.9, 0.1]),
        cheap_embedding: Some(vec![0.25, 0.85, 0.3]),
        ..Record::default()
    };
    for kind in [LossKind::Binary, LossKind::Cosine] {
        let spec = LossSpec::default_for(kind);
        let resolved = resolve_loss(&record, &spec)?;
        println!(
            "{kind:?} loss of {} = {:.4} (bound {})",
            resolved.id,
            resolved.loss,
            spec.bound()
        );
    }

    let precomputed = Record {
        loss: Some(1.7),
        ..record
    };
    match resolve_loss(&precomputed, &LossSpec::precomputed(1.0)?) {
        Ok(_) => unreachable!(),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
