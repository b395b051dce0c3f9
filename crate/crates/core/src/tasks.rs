//! Benchmark task names and the category each belongs to.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown category {0:?}")]
pub struct UnknownCategory(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Recipe,
    Ingredient,
    Nutrition,
    Action,
    #[serde(rename = "3D Perception")]
    Perception3d,
    #[serde(rename = "Object Motion")]
    ObjectMotion,
    Gaze,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Recipe,
        Category::Ingredient,
        Category::Nutrition,
        Category::Action,
        Category::Perception3d,
        Category::ObjectMotion,
        Category::Gaze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Recipe => "Recipe",
            Category::Ingredient => "Ingredient",
            Category::Nutrition => "Nutrition",
            Category::Action => "Action",
            Category::Perception3d => "3D Perception",
            Category::ObjectMotion => "Object Motion",
            Category::Gaze => "Gaze",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

/// The 30 benchmark tasks in reporting order.
pub const KNOWN_TASKS: [(&str, Category); 30] = [
    ("Following Activity Recognition", Category::Recipe),
    ("Multi-Recipe Recognition", Category::Recipe),
    ("Multi-Step Localization", Category::Recipe),
    ("Prep Localization", Category::Recipe),
    ("Recipe Recognition", Category::Recipe),
    ("Rough Step Localization", Category::Recipe),
    ("Step Localization", Category::Recipe),
    ("Step Recognition", Category::Recipe),
    ("Ingredient Retrieval", Category::Ingredient),
    ("Ingredient Weight", Category::Ingredient),
    ("Ingredients Order", Category::Ingredient),
    ("Ingredient Adding Localization", Category::Ingredient),
    ("Ingredient Recognition", Category::Ingredient),
    ("Exact Ingredient Recognition", Category::Ingredient),
    ("Image Nutrition Estimation", Category::Nutrition),
    ("Nutrition Change", Category::Nutrition),
    ("Video Nutrition Estimation", Category::Nutrition),
    ("How Recognition", Category::Action),
    ("Why Recognition", Category::Action),
    ("Action Localization", Category::Action),
    ("Action Recognition", Category::Action),
    ("Fixture Interaction Counting", Category::Perception3d),
    ("Fixture Location", Category::Perception3d),
    ("Object Location", Category::Perception3d),
    ("Object Contents Retrieval", Category::Perception3d),
    ("Object Movement Itinerary", Category::ObjectMotion),
    ("Object Movement Counting", Category::ObjectMotion),
    ("Stationary Object Localization", Category::ObjectMotion),
    ("Gaze Estimation", Category::Gaze),
    ("Interaction Anticipation", Category::Gaze),
];

/// A task label. Known benchmark tasks sort in reporting order, ahead of any
/// other label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Task(String);

impl Task {
    pub fn new(name: impl Into<String>) -> Self {
        Task(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    fn position(&self) -> Option<usize> {
        KNOWN_TASKS.iter().position(|(n, _)| *n == self.0)
    }

    pub fn is_known(&self) -> bool {
        self.position().is_some()
    }

    /// Category of a known task.
    pub fn category(&self) -> Option<Category> {
        self.position().map(|i| KNOWN_TASKS[i].1)
    }

    pub fn known() -> impl Iterator<Item = Task> {
        KNOWN_TASKS.iter().map(|(n, _)| Task::new(*n))
    }
}

impl Ord for Task {
    fn cmp(&self, other: &Self) -> Ordering {
        let key = |t: &Task| t.position().unwrap_or(usize::MAX);
        key(self).cmp(&key(other)).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Task {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Task {
    fn from(s: &str) -> Self {
        Task::new(s)
    }
}
