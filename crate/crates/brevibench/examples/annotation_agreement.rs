//! Category distributions and inter-annotator agreement over span
//! annotations.
//!
//! ```bash
//! cargo run -p brevibench --example annotation_agreement
//! ```

use brevibench::categories::{
    distribution, pairwise_f, AnnotatedResponse, Category, CategorySpan, GroupBy,
};

fn span(start: usize, end: usize, category: Category) -> CategorySpan {
    CategorySpan {
        start,
        end,
        category,
    }
}

fn main() -> anyhow::Result<()> {
    // "Paris . It is a center of art and culture Let me know if you need anything else !"
    let response =
        "Paris. It is a center of art and culture. Let me know if you need anything else!";

    // two annotators agree on the minimal answer but disagree on the tail
    let annotator_a = AnnotatedResponse {
        id: "dolly/q1".into(),
        model: "gemma-2-9b".into(),
        response_text: response.into(),
        spans: vec![
            span(0, 2, Category::MinAns),
            span(2, 11, Category::AddInfo),
            span(11, 20, Category::Converse),
        ],
    };
    let mut annotator_b = annotator_a.clone();
    annotator_b.spans = vec![
        span(0, 2, Category::MinAns),
        span(2, 11, Category::AddInfo),
        span(11, 20, Category::Irrel), // reads the sign-off as irrelevant
    ];
    annotator_a.validate()?;
    annotator_b.validate()?;

    let agreement = pairwise_f(
        std::slice::from_ref(&annotator_a),
        std::slice::from_ref(&annotator_b),
    )?;
    println!("pairwise macro F between annotators: {agreement:.3}\n");

    println!("token share per category (annotator A):");
    for (group, fractions) in distribution(&[annotator_a], GroupBy::Dataset) {
        for (category, fraction) in fractions {
            println!("  {group}  {:<8} {fraction:.3}", category.name());
        }
    }
    Ok(())
}
