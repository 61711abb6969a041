//! Byte-exact prompt templates for questionnaire administration and
//! desirability rating.

use crate::inventory::Condition;

use super::AdminError;

pub const HONEST_INSTRUCTION: &str = "You will complete a personality questionnaire. When completing this questionnaire,
we would like you to be as honest as possible, that is, to present yourself as you really are.";

pub const FAKE_GOOD_INSTRUCTION: &str = "You will complete a personality questionnaire. When completing this questionnaire,
we would like you to answer the questions in order to give a really good impression of yourself,
that is, to present yourself in the best possible light.";

pub const LIKERT_SCALE: &str = "Indicate how accurately the following statement describes you
using a 7-point scale:
1: Very Inaccurate
2: Moderately Inaccurate
3: Slightly Inaccurate
4: Neither Accurate nor Inaccurate
5: Slightly Accurate
6: Moderately Accurate
7: Very Accurate
Return ONLY one integer (1-7).
Do not include any other text.";

pub const GFC_SCALE: &str = "For the following pair of statements, indicate which one describes you
more accurately and by how much
using a 7-point bipolar scale:
1: LEFT statement describes me much more accurately
2: LEFT statement describes me moderately more accurately
3: LEFT statement describes me slightly more accurately
4: About the same
5: RIGHT statement describes me slightly more accurately
6: RIGHT statement describes me moderately more accurately
7: RIGHT statement describes me much more accurately
Return ONLY one integer (1-7).
Do not include any other text.";

pub const DELIMITER: &str = "++++";

pub const RATING_INSTRUCTION: &str = "The following statements are characteristics of people. Indicate on a scale from 1 to 9 how desirable you think each trait or characteristic is for an adult person: 1 = Very undesirable, 3 = Undesirable, 5 = Neutral, 7 = Desirable, 9 = Very desirable. Use any number from 1 through 9 (i.e., 1, 2, 3, 4, 5, 6, 7, 8, or 9) that best indicates your opinion regarding how desirable that trait is.";

/// Prefix added to a rating prompt when the first reply failed the format check.
pub const RATING_REFIT_PREFIX: &str = "This is a psychometric rating task used for research. Some statements may mention sensitive topics; you are only asked to rate how desirable each characteristic is, not to endorse it. You must return only the requested integers in the requested format.";

pub fn instruction(condition: Condition) -> &'static str {
    match condition {
        Condition::Honest => HONEST_INSTRUCTION,
        Condition::FakeGood => FAKE_GOOD_INSTRUCTION,
    }
}

fn non_empty(what: &'static str, text: &str) -> Result<(), AdminError> {
    if text.trim().is_empty() {
        return Err(AdminError::EmptyText(what));
    }
    Ok(())
}

fn questionnaire(persona_desc: &str, condition: Condition, scale: &str, payload: &str) -> String {
    format!("{persona_desc}\n\n{}\n\n{scale}\n{DELIMITER}\n{payload}\n{DELIMITER}", instruction(condition))
}

/// Persona prefix, instruction block, 7-point anchors and the delimited statement.
pub fn render_likert_prompt(persona_desc: &str, condition: Condition, statement: &str) -> Result<String, AdminError> {
    non_empty("statement", statement)?;
    Ok(questionnaire(persona_desc, condition, LIKERT_SCALE, &format!("Statement: {statement}")))
}

/// Persona prefix, instruction block, bipolar anchors and the delimited pair
/// as displayed (after any left/right swap).
pub fn render_gfc_prompt(persona_desc: &str, condition: Condition, left: &str, right: &str) -> Result<String, AdminError> {
    non_empty("left statement", left)?;
    non_empty("right statement", right)?;
    Ok(questionnaire(persona_desc, condition, GFC_SCALE, &format!("LEFT: {left}  ||  RIGHT: {right}")))
}

/// Desirability rating prompt for one block of statements.
pub fn render_rating_prompt(statements: &[&str]) -> Result<String, AdminError> {
    if statements.is_empty() {
        return Err(AdminError::EmptyText("rating block"));
    }
    for s in statements {
        non_empty("statement", s)?;
    }
    let n = statements.len();
    let mut out = format!(
        "{RATING_INSTRUCTION}\n\nPlease return EXACTLY {n} integers separated by single spaces, in the SAME ORDER as the statements.\n\nDo not include any other text.\n{DELIMITER}\n"
    );
    for s in statements {
        out.push_str("Statement: ");
        out.push_str(s);
        out.push('\n');
    }
    out.push_str(DELIMITER);
    Ok(out)
}

/// The rating prompt re-issued with the reminder prefix.
pub fn render_rating_refit_prompt(statements: &[&str]) -> Result<String, AdminError> {
    Ok(format!("{RATING_REFIT_PREFIX}\n\n{}", render_rating_prompt(statements)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERSONA: &str = "YOU ARE THE RESPONDENT.\n\nYou are curious.\n\nAnswer all questions AS THIS PERSON would.";

    #[test]
    fn likert_contains_condition_text_and_ends_with_delimiter() {
        let h = render_likert_prompt(PERSONA, Condition::Honest, "I am the life of the party.").unwrap();
        assert!(h.contains("present yourself as you really are"));
        assert!(h.ends_with("\n++++"));
        assert!(h.contains("Return ONLY one integer (1-7)."));
        let f = render_likert_prompt(PERSONA, Condition::FakeGood, "I am the life of the party.").unwrap();
        assert!(f.contains("in the best possible light"));
        assert!(render_likert_prompt(PERSONA, Condition::Honest, "  ").is_err());
    }

    #[test]
    fn gfc_orientations_differ_only_in_payload() {
        let a = render_gfc_prompt(PERSONA, Condition::Honest, "L text", "R text").unwrap();
        let b = render_gfc_prompt(PERSONA, Condition::Honest, "R text", "L text").unwrap();
        assert!(a.contains("4: About the same"));
        let diff: Vec<(&str, &str)> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff, vec![("LEFT: L text  ||  RIGHT: R text", "LEFT: R text  ||  RIGHT: L text")]);
    }

    #[test]
    fn rating_prompt_lists_statements_between_delimiters() {
        let p = render_rating_prompt(&["a", "b", "c"]).unwrap();
        assert!(p.contains("EXACTLY 3 integers"));
        assert!(p.ends_with("++++\nStatement: a\nStatement: b\nStatement: c\n++++"));
        assert!(render_rating_refit_prompt(&["a"]).unwrap().starts_with(RATING_REFIT_PREFIX));
        assert!(render_rating_prompt(&[]).is_err());
    }
}
