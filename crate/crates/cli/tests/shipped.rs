//! Shipped model files match their builders and survive a round trip.
//! Set `QMF_BLESS=1` to rewrite the files from the builders.

use std::path::PathBuf;

use qmf_cli::model_file::{parse_model, serialize_model, to_file};
use qmf_cli::shipped::shipped_models;
use qmf_core::models::fr::fr_model;

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models")
}

#[test]
fn files_match_builders() {
    let bless = std::env::var("QMF_BLESS").is_ok_and(|v| v == "1");
    for (stem, g) in shipped_models() {
        let path = models_dir().join(format!("{stem}.model.json"));
        let text = serialize_model(&g);
        if bless {
            std::fs::write(&path, &text).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(on_disk, text, "{stem} is stale; rerun with QMF_BLESS=1");
    }
}

#[test]
fn round_trip_is_bit_exact() {
    for (stem, _) in shipped_models() {
        let text = std::fs::read_to_string(models_dir().join(format!("{stem}.model.json"))).unwrap();
        let g = parse_model(&text).unwrap();
        assert_eq!(serialize_model(&g), text, "{stem}");
        let again = parse_model(&serialize_model(&g)).unwrap();
        assert_eq!(to_file(&again), to_file(&g), "{stem}");
    }
}

#[test]
fn fr_file_is_the_full_model() {
    let text = std::fs::read_to_string(models_dir().join("fr.model.json")).unwrap();
    let g = parse_model(&text).unwrap();
    let full = fr_model().full;
    assert_eq!(to_file(&g), to_file(&full));
    for f in full.factors() {
        assert_eq!(g.factor(&f.id).unwrap().tensor, f.tensor, "{}", f.id);
        assert_eq!(g.factor(&f.id).unwrap().stage, f.stage);
    }
}
