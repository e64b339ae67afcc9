use serde::{Deserialize, Serialize};

use crate::scene::CarColor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub caption: String,
    pub element: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer: String,
    pub element_type: String,
}

pub const PATH_CHOICES: [&str; 10] =
    ["trail", "grass", "sand", "asphalted road", "dirt", "snow", "mountain", "river", "sea", "forest"];

pub fn common_colors() -> Vec<String> {
    CarColor::ALL.iter().map(|c| c.to_string()).collect()
}

/// The nine faithfulness questions for a two-car street scene.
pub fn tifa_questions(type1: &str, type2: &str, color1: &str, color2: &str) -> Vec<Question> {
    let caption = format!("{color1} {type1} and {color2} {type2} are driving on a road.");
    let yes_no = || vec!["yes".to_string(), "no".to_string()];
    let q = |element: &str, question: String, choices: Vec<String>, answer: &str, element_type: &str| Question {
        caption: caption.clone(),
        element: element.to_string(),
        question,
        choices,
        answer: answer.to_string(),
        element_type: element_type.to_string(),
    };
    vec![
        q(type1, format!("is there a {type1}?"), yes_no(), "yes", "object"),
        q(type2, format!("is there a {type2}?"), yes_no(), "yes", "object"),
        q("road", "is there an asphalted road?".into(), yes_no(), "yes", "location"),
        q(
            "road",
            "what type of path is this?".into(),
            PATH_CHOICES.iter().map(|s| s.to_string()).collect(),
            "asphalted road",
            "location",
        ),
        q(color1, format!("is the {type1} {color1}?"), yes_no(), "yes", "color"),
        q(color1, format!("what color is the {type1}?"), common_colors(), color1, "color"),
        q(color2, format!("is the {type2} {color2}?"), yes_no(), "yes", "color"),
        q(color2, format!("what color is the {type2}?"), common_colors(), color2, "color"),
        q("driving", format!("are the {type1} and {type2} driving?"), yes_no(), "yes", "activity"),
    ]
}

/// Fraction of answers equal to the expected ones; missing answers count as wrong.
pub fn tifa_score(questions: &[Question], answers: &[String]) -> f64 {
    if questions.is_empty() {
        return 0.0;
    }
    let correct = questions.iter().zip(answers).filter(|(q, a)| q.answer == **a).count();
    correct as f64 / questions.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupe_and_sedan() {
        let qs = tifa_questions("coupe car", "sedan", "red", "blue");
        assert_eq!(qs.len(), 9);
        assert_eq!(qs[0].caption, "red coupe car and blue sedan are driving on a road.");
        assert_eq!(qs[3].question, "what type of path is this?");
        assert!(qs[3].choices.contains(&"asphalted road".to_string()));
        assert_eq!(qs[3].answer, "asphalted road");
        assert_eq!(qs[5].choices.len(), 11);
        assert_eq!(qs[5].answer, "red");
        assert_eq!(qs[8].question, "are the coupe car and sedan driving?");
        let kinds: Vec<_> = qs.iter().map(|q| q.element_type.as_str()).collect();
        assert_eq!(kinds, ["object", "object", "location", "location", "color", "color", "color", "color", "activity"]);
    }

    #[test]
    fn scoring() {
        let qs = tifa_questions("SUV", "sedan", "white", "black");
        let mut answers: Vec<String> = qs.iter().map(|q| q.answer.clone()).collect();
        assert_eq!(tifa_score(&qs, &answers), 1.0);
        for a in answers.iter_mut().take(3) {
            *a = "no".into();
        }
        assert!((tifa_score(&qs, &answers) - 2.0 / 3.0).abs() < 1e-15);
    }
}
