//! Geotagged community notes with emoji reactions.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, ErrorCode, Result};
use crate::geo::{haversine_m, LonLat};
use crate::ids::{CourierId, NoteId};

pub const MAX_NOTE_CHARS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LocationNote {
    pub location_note_id: NoteId,
    pub author_courier_id: CourierId,
    pub position: LonLat,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub reactions: BTreeMap<String, BTreeSet<CourierId>>,
    #[serde(default)]
    pub deleted: bool,
}

pub fn validate_text(text: &str) -> Result<()> {
    let n = text.chars().count();
    if text.trim().is_empty() {
        return Err(Error::field("text", "must not be blank"));
    }
    if n > MAX_NOTE_CHARS {
        return Err(Error::field("text", format!("{n} characters exceeds {MAX_NOTE_CHARS}")));
    }
    Ok(())
}

fn is_pictographic(c: char) -> bool {
    matches!(c as u32,
        0x00A9 | 0x00AE | 0x203C | 0x2049 | 0x2122 | 0x2139
        | 0x2194..=0x21AA
        | 0x231A..=0x23FF
        | 0x24C2
        | 0x25AA..=0x25FE
        | 0x2600..=0x27BF
        | 0x2934..=0x2935
        | 0x2B05..=0x2B55
        | 0x3030 | 0x303D | 0x3297 | 0x3299
        | 0x1F000..=0x1FAFF)
}

fn is_emoji_component(c: char) -> bool {
    matches!(c as u32,
        0x200D            // zero width joiner
        | 0xFE0F          // emoji presentation selector
        | 0x20E3          // combining keycap
        | 0x1F3FB..=0x1F3FF // skin tone modifiers
        | 0x1F1E6..=0x1F1FF // regional indicators
        | 0xE0020..=0xE007F) // tag sequences
}

/// A single extended grapheme cluster made only of emoji code points
/// (including flags, keycaps, ZWJ sequences and modifiers).
pub fn is_single_emoji(s: &str) -> bool {
    if s.graphemes(true).count() != 1 {
        return false;
    }
    let chars: Vec<char> = s.chars().collect();
    let keycap = chars.len() >= 2
        && matches!(chars[0], '0'..='9' | '#' | '*')
        && chars[1..].iter().all(|&c| c == '\u{FE0F}' || c == '\u{20E3}')
        && chars.contains(&'\u{20E3}');
    let flag = chars.len() == 2 && chars.iter().all(|&c| ('\u{1F1E6}'..='\u{1F1FF}').contains(&c));
    let sequence = chars.iter().any(|&c| is_pictographic(c))
        && chars.iter().all(|&c| is_pictographic(c) || is_emoji_component(c));
    keycap || flag || sequence
}

impl LocationNote {
    pub fn new(id: NoteId, author: CourierId, position: LonLat, text: String, at: DateTime<Utc>) -> Result<Self> {
        position.validate()?;
        validate_text(&text)?;
        Ok(Self {
            location_note_id: id,
            author_courier_id: author,
            position,
            text,
            created_at: at,
            updated_at: at,
            reactions: BTreeMap::new(),
            deleted: false,
        })
    }

    fn ensure_author(&self, courier: &CourierId) -> Result<()> {
        if &self.author_courier_id == courier {
            Ok(())
        } else {
            Err(Error::new(
                ErrorCode::ForbiddenActor,
                format!("only the author may modify note {}", self.location_note_id),
            ))
        }
    }

    pub fn ensure_visible(&self) -> Result<()> {
        if self.deleted {
            Err(Error::not_found("location note", self.location_note_id.as_str()))
        } else {
            Ok(())
        }
    }

    pub fn edit(&mut self, courier: &CourierId, text: String, at: DateTime<Utc>) -> Result<()> {
        self.ensure_visible()?;
        self.ensure_author(courier)?;
        validate_text(&text)?;
        self.text = text;
        self.updated_at = at.max(self.updated_at);
        Ok(())
    }

    pub fn delete(&mut self, courier: &CourierId, at: DateTime<Utc>) -> Result<()> {
        self.ensure_visible()?;
        self.ensure_author(courier)?;
        self.deleted = true;
        self.updated_at = at.max(self.updated_at);
        Ok(())
    }

    /// Toggles `courier`'s `emoji` reaction.
    pub fn react(&mut self, courier: &CourierId, emoji: &str) -> Result<()> {
        self.ensure_visible()?;
        if !is_single_emoji(emoji) {
            return Err(Error::field("emoji", format!("'{emoji}' is not a single emoji")));
        }
        let set = self.reactions.entry(emoji.to_owned()).or_default();
        if !set.remove(courier) {
            set.insert(courier.clone());
        }
        if set.is_empty() {
            self.reactions.remove(emoji);
        }
        Ok(())
    }
}

/// Visible notes by `author`, newest first.
pub fn notes_by_author(all: Vec<LocationNote>, author: &CourierId) -> Vec<LocationNote> {
    let mut out: Vec<_> = all
        .into_iter()
        .filter(|n| !n.deleted && &n.author_courier_id == author)
        .collect();
    out.sort_by(|a, b| {
        b.created_at
            .cmp(&a.created_at)
            .then_with(|| a.location_note_id.cmp(&b.location_note_id))
    });
    out
}

/// Visible notes within `radius_m` metres (inclusive), nearest first.
pub fn notes_near(all: Vec<LocationNote>, center: LonLat, radius_m: f64) -> Result<Vec<(LocationNote, f64)>> {
    center.validate()?;
    if !radius_m.is_finite() || radius_m < 0.0 {
        return Err(Error::field("radius", "must be a non-negative number of metres"));
    }
    let mut out: Vec<_> = all
        .into_iter()
        .filter(|n| !n.deleted)
        .map(|n| {
            let d = haversine_m(center, n.position);
            (n, d)
        })
        .filter(|(_, d)| *d <= radius_m)
        .collect();
    out.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then_with(|| a.0.location_note_id.cmp(&b.0.location_note_id))
    });
    Ok(out)
}
