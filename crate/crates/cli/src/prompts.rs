//! Built-in prompt templates, keyed by dataset name.
//!
//! A prompt is `{sequence description} {event description} {task
//! description}`. The event and task descriptions depend on whether the type
//! or the time comes first inside each event block. A plain-text file of
//! `dataset name = sequence description | type-first event description |
//! time-first event description` lines can override the built-ins.

use std::collections::BTreeMap;
use std::path::Path;

use tppkit::encode::EventOrder;

struct Template {
    sequence: &'static str,
    event_type_first: &'static str,
    event_time_first: &'static str,
}

const GENERIC: Template = Template {
    sequence: "You are given a sequence of events.",
    event_type_first: "Each event in the sequence lists the event type followed by the timestamp.",
    event_time_first: "Each event in the sequence lists the timestamp followed by the event type.",
};

fn builtin(name: &str) -> Template {
    let key = name.to_lowercase();
    if key.contains("stack") {
        Template {
            sequence: "You are given a sequence of badge awards earned by a user on the Stack Overflow platform.",
            event_type_first: "Each event in the sequence lists the badge name followed by the timestamp.",
            event_time_first: "Each event in the sequence lists the timestamp followed by the badge name.",
        }
    } else if key.contains("crime") || key.contains("chicago") {
        Template {
            sequence: "You are given a sequence of reported crime incidents that occurred in the City of Chicago.",
            event_type_first: "Each event in the sequence lists the crime type followed by the timestamp.",
            event_time_first: "Each event in the sequence lists the timestamp followed by the crime type.",
        }
    } else if key.contains("taxi") {
        Template {
            sequence: "You are given a sequence of taxi trips taken in New York City.",
            event_type_first: "Each event in the sequence lists the pick-up or drop-off location followed by the timestamp.",
            event_time_first: "Each event in the sequence lists the timestamp followed by the pick-up or drop-off location.",
        }
    } else if key.contains("earthquake") {
        Template {
            sequence: "You are given a sequence of earthquake events recorded in the United States.",
            event_type_first: "Each event in the sequence lists the magnitude classification (large or small) followed by the timestamp.",
            event_time_first: "Each event in the sequence lists the timestamp followed by the magnitude classification (large or small).",
        }
    } else if key.contains("amazon") {
        Template {
            sequence: "You are given a sequence of product category reviews written by a user on the Amazon platform.",
            event_type_first: "Each event in the sequence lists the product category followed by the timestamp.",
            event_time_first: "Each event in the sequence lists the timestamp followed by the product category.",
        }
    } else {
        GENERIC
    }
}

fn task(order: EventOrder) -> &'static str {
    match order {
        EventOrder::TypeFirst => {
            "Based on this sequence, predict the next event type and the corresponding time."
        }
        EventOrder::TimeFirst => {
            "Based on this sequence, predict the next event time and the corresponding type."
        }
    }
}

/// The full prompt text for a dataset.
pub fn prompt_for(name: &str, order: EventOrder, overrides: &BTreeMap<String, String>) -> String {
    if let Some(custom) = overrides.get(&name.to_lowercase()) {
        let parts: Vec<&str> = custom.split('|').map(str::trim).collect();
        let sequence = parts.first().copied().unwrap_or("");
        let event = match order {
            EventOrder::TypeFirst => parts.get(1).copied().unwrap_or(""),
            EventOrder::TimeFirst => parts.get(2).or(parts.get(1)).copied().unwrap_or(""),
        };
        return format!("{sequence} {event} {}", task(order)).trim().to_string();
    }
    let t = builtin(name);
    let event = match order {
        EventOrder::TypeFirst => t.event_type_first,
        EventOrder::TimeFirst => t.event_time_first,
    };
    format!("{} {} {}", t.sequence, event, task(order))
}

/// Loads prompt overrides from a plain-text file of
/// `name = seq | type-first | time-first` lines.
pub fn load_overrides(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_lowercase(), v.trim().to_string());
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_dataset_templates_resolve() {
        let p = prompt_for("U.S. Earthquake", EventOrder::TypeFirst, &BTreeMap::new());
        assert!(p.contains("earthquake events recorded"));
        assert!(p.contains("predict the next event type and the corresponding time"));
        let p2 = prompt_for("U.S. Earthquake", EventOrder::TimeFirst, &BTreeMap::new());
        assert!(p2.contains("predict the next event time and the corresponding type"));
    }

    #[test]
    fn unknown_dataset_falls_back_to_generic() {
        let p = prompt_for("hawkes-synthetic", EventOrder::TypeFirst, &BTreeMap::new());
        assert!(p.starts_with("You are given a sequence of events."));
    }

    #[test]
    fn override_wins() {
        let mut map = BTreeMap::new();
        map.insert(
            "mydata".to_string(),
            "Custom sequence. | Type then time. | Time then type.".to_string(),
        );
        let p = prompt_for("MyData", EventOrder::TimeFirst, &map);
        assert!(p.starts_with("Custom sequence. Time then type."));
    }
}
