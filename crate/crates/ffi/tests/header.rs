use std::path::Path;
use std::process::Command;

const FUNCTIONS: [&str; 12] = [
    "fkb_last_error",
    "fkb_version",
    "fkb_string_free",
    "fkb_kb_open",
    "fkb_kb_free",
    "fkb_kb_counts",
    "fkb_kb_vocab_json",
    "fkb_kb_query_triplets",
    "fkb_kb_query_posts",
    "fkb_model_open",
    "fkb_model_free",
    "fkb_model_predict",
];

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fashionkb.h");
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    for f in FUNCTIONS {
        assert!(h.contains(&format!("{f}(")), "{f} missing from the header");
    }
    for code in [
        "FKB_STATUS_OK = 0",
        "FKB_STATUS_QUERY = 5",
        "FKB_STATUS_PANIC = 7",
    ] {
        assert!(h.contains(code), "{code} missing");
    }
    assert!(h.contains("typedef struct FkbKb FkbKb;"));
}

// Compiles a small client against the header as C and as C++.
#[test]
fn header_compiles() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(
        &src,
        r#"#include "fashionkb.h"
int client(const char *path) {
    FkbKb *kb = NULL;
    size_t instances = 0, posts = 0;
    char *json = NULL;
    if (fkb_kb_open(path, &kb) != FKB_STATUS_OK) return 1;
    if (fkb_kb_counts(kb, &instances, &posts) != FKB_STATUS_OK) return 2;
    if (fkb_kb_query_triplets(kb, "limit=3", &json) == FKB_STATUS_QUERY) return (int)(fkb_last_error() != NULL);
    fkb_string_free(json);
    fkb_kb_free(kb);
    return 0;
}
"#,
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    for (compiler, lang, std) in [("cc", "c", "-std=c11"), ("c++", "c++", "-std=c++17")] {
        let out = match Command::new(compiler)
            .args(["-x", lang, std, "-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(&include)
            .arg(&src)
            .output()
        {
            Ok(out) => out,
            Err(e) => {
                eprintln!("skipping {compiler}: {e}");
                continue;
            }
        };
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
