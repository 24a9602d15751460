use genquery_core::llm::{concretize_bindings, keyword_bindings, render_template, TemplateId};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn concretize_prompt_matches_golden() {
    let bundle = render_template(
        TemplateId::Concretize,
        &concretize_bindings("hiking poster design"),
    )
    .unwrap();
    assert_eq!(
        bundle.user_prompt,
        golden("concretize_hiking_poster_design.txt")
    );
    assert_eq!(bundle.system_prompt, golden("system_prompt.txt"));
}

#[test]
fn keyword_prompt_matches_golden() {
    let history = vec![
        "hiking poster design".to_owned(),
        "vintage hiking poster design with mountain landscape".to_owned(),
        "mountain landscape illustration".to_owned(),
    ];
    let saved = vec![
        "retro poster of a mountain trail at sunset".to_owned(),
        "flat illustration of a forest campsite".to_owned(),
    ];
    let bundle = render_template(
        TemplateId::Keywords,
        &keyword_bindings("green forest illustration with mountains", &history, &saved),
    )
    .unwrap();
    assert_eq!(bundle.user_prompt, golden("keywords_with_history.txt"));
    assert_eq!(bundle.system_prompt, golden("system_prompt.txt"));
}

#[test]
fn keyword_prompt_empty_history_matches_golden() {
    let bundle = render_template(
        TemplateId::Keywords,
        &keyword_bindings("green forest illustration with mountains", &[], &[]),
    )
    .unwrap();
    assert_eq!(bundle.user_prompt, golden("keywords_empty_history.txt"));
}

#[test]
fn rendering_is_stable_across_runs() {
    let a = render_template(TemplateId::Concretize, &concretize_bindings("poster")).unwrap();
    let b = render_template(TemplateId::Concretize, &concretize_bindings("poster")).unwrap();
    assert_eq!(a, b);
}
