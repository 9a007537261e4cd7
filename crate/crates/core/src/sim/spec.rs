//! Declarative description of a simulated app and its seeded generator.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::hashing::derive_seed;

/// On-disk format version of `apps/{name}.json`.
pub const SPEC_VERSION: u32 = 1;

/// Maximum number of elements a screen can hold and still render one row each.
pub const MAX_ELEMENTS_PER_SCREEN: usize = 13;

pub type ScreenId = u32;
pub type ElementId = u32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Bool(bool),
    Text(String),
}

impl FieldValue {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            FieldValue::Bool(b) => Some(*b),
            FieldValue::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            FieldValue::Bool(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ElementKind {
    Nav {
        target_screen: ScreenId,
    },
    Toggle {
        field: String,
    },
    Input {
        field: String,
    },
    Back,
    /// Inert control or static content; activating it never changes state.
    Terminal,
}

impl ElementKind {
    pub fn name(&self) -> &'static str {
        match self {
            ElementKind::Nav { .. } => "nav",
            ElementKind::Toggle { .. } => "toggle",
            ElementKind::Input { .. } => "input",
            ElementKind::Back => "back",
            ElementKind::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UiElement {
    pub element_id: ElementId,
    pub kind: ElementKind,
    pub label: String,
    pub interactable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScreenSpec {
    pub screen_id: ScreenId,
    pub title: String,
    pub elements: Vec<UiElement>,
}

impl SimScreenSpec {
    pub fn element(&self, id: ElementId) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.element_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimAppSpec {
    pub version: u32,
    pub app_name: String,
    pub screens: Vec<SimScreenSpec>,
    pub nav_edges: Vec<(ScreenId, ScreenId)>,
    pub data_fields: BTreeMap<String, FieldValue>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppGenParams {
    pub n_screens: usize,
    /// Content elements (toggles, inputs, inert controls) per screen; navigation
    /// links and the back button are added on top according to the screen graph.
    pub elements_per_screen: usize,
    pub n_fields: usize,
}

impl Default for AppGenParams {
    fn default() -> Self {
        Self {
            n_screens: 10,
            elements_per_screen: 3,
            n_fields: 8,
        }
    }
}

impl SimAppSpec {
    pub fn screen(&self, id: ScreenId) -> Option<&SimScreenSpec> {
        self.screens.get(id as usize).filter(|s| s.screen_id == id)
    }

    /// Screen that hosts the element bound to `field`, with that element.
    pub fn field_location(&self, field: &str) -> Option<(&SimScreenSpec, &UiElement)> {
        self.screens.iter().find_map(|s| {
            s.elements
                .iter()
                .find(|e| match &e.kind {
                    ElementKind::Toggle { field: f } | ElementKind::Input { field: f } => {
                        f == field
                    }
                    _ => false,
                })
                .map(|e| (s, e))
        })
    }

    /// Undirected adjacency derived from the navigation edges.
    pub fn undirected_adjacency(&self) -> Vec<BTreeSet<ScreenId>> {
        let mut adj = vec![BTreeSet::new(); self.screens.len()];
        for &(a, b) in &self.nav_edges {
            if (a as usize) < adj.len() && (b as usize) < adj.len() {
                adj[a as usize].insert(b);
                adj[b as usize].insert(a);
            }
        }
        adj
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidSpec(msg));
        if self.version != SPEC_VERSION {
            return bad(format!("unsupported spec version {}", self.version));
        }
        if self.screens.is_empty() {
            return bad("app has no screens".into());
        }
        let n = self.screens.len();
        let mut derived_edges = BTreeSet::new();
        for (idx, screen) in self.screens.iter().enumerate() {
            if screen.screen_id as usize != idx {
                return bad(format!(
                    "screen at position {idx} has id {}",
                    screen.screen_id
                ));
            }
            if screen.elements.is_empty() {
                return bad(format!("screen {idx} has no elements"));
            }
            if screen.elements.len() > MAX_ELEMENTS_PER_SCREEN {
                return bad(format!(
                    "screen {idx} has more than {MAX_ELEMENTS_PER_SCREEN} elements"
                ));
            }
            let mut ids = BTreeSet::new();
            for el in &screen.elements {
                if !ids.insert(el.element_id) {
                    return bad(format!(
                        "duplicate element id {} on screen {idx}",
                        el.element_id
                    ));
                }
                match &el.kind {
                    ElementKind::Nav { target_screen } => {
                        if *target_screen as usize >= n {
                            return bad(format!(
                                "element {} on screen {idx} targets missing screen {target_screen}",
                                el.element_id
                            ));
                        }
                        derived_edges.insert((screen.screen_id, *target_screen));
                    }
                    ElementKind::Toggle { field } => match self.data_fields.get(field) {
                        Some(FieldValue::Bool(_)) => {}
                        _ => {
                            return bad(format!(
                                "toggle {} references non-boolean field {field:?}",
                                el.element_id
                            ))
                        }
                    },
                    ElementKind::Input { field } => match self.data_fields.get(field) {
                        Some(FieldValue::Text(_)) => {}
                        _ => {
                            return bad(format!(
                                "input {} references non-text field {field:?}",
                                el.element_id
                            ))
                        }
                    },
                    ElementKind::Back | ElementKind::Terminal => {}
                }
            }
        }
        let listed: BTreeSet<_> = self.nav_edges.iter().copied().collect();
        if listed != derived_edges {
            return bad("nav_edges do not match the navigation elements".into());
        }
        let adj = self.undirected_adjacency();
        if reachable_count(&adj, 0) != n {
            return bad("screen graph is not connected".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: SimAppSpec =
            serde_json::from_str(text).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| SimError::Io(parent.display().to_string(), e))?;
        }
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|e| SimError::Io(path.display().to_string(), e))
    }
}

fn reachable_count(adj: &[BTreeSet<ScreenId>], start: ScreenId) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start as usize] = true;
    let mut count = 1;
    while let Some(s) = queue.pop_front() {
        for &t in &adj[s as usize] {
            if !seen[t as usize] {
                seen[t as usize] = true;
                count += 1;
                queue.push_back(t);
            }
        }
    }
    count
}

const SCREEN_TITLES: &[&str] = &[
    "Network",
    "Display",
    "Sound",
    "Storage",
    "Battery",
    "Privacy",
    "Accounts",
    "Security",
    "Accessibility",
    "Location",
    "Notifications",
    "Apps",
    "System",
    "Language",
    "Backup",
    "Wallpaper",
    "Calendar",
    "Events",
    "Reminders",
    "Contacts",
    "Favorites",
    "Groups",
    "Notes",
    "Folders",
    "Archive",
    "Trash",
    "Recorder",
    "Playlists",
    "Albums",
    "Library",
    "Downloads",
    "Profile",
    "Sharing",
    "Widgets",
    "Gestures",
    "Keyboard",
    "Clock",
    "Alarms",
    "Timers",
    "Weather",
];

const TOGGLE_FIELDS: &[(&str, &str)] = &[
    ("wifi", "Wi-Fi"),
    ("bluetooth", "Bluetooth"),
    ("dark_mode", "Dark mode"),
    ("airplane_mode", "Airplane mode"),
    ("auto_sync", "Auto sync"),
    ("location_access", "Location access"),
    ("push_alerts", "Push alerts"),
    ("do_not_disturb", "Do not disturb"),
    ("battery_saver", "Battery saver"),
    ("auto_rotate", "Auto rotate"),
    ("hotspot", "Hotspot"),
    ("nfc", "NFC payments"),
    ("vibrate", "Vibrate on ring"),
    ("backup_enabled", "Cloud backup"),
    ("weekly_repeat", "Weekly repeat"),
    ("high_contrast", "High contrast text"),
];

const TEXT_FIELDS: &[(&str, &str)] = &[
    ("device_name", "Device name"),
    ("nickname", "Nickname"),
    ("note_title", "Note title"),
    ("home_city", "Home city"),
    ("contact_email", "Contact email"),
    ("ringtone_name", "Ringtone name"),
    ("alarm_label", "Alarm label"),
    ("event_title", "Event title"),
    ("folder_name", "Folder name"),
    ("playlist_name", "Playlist name"),
    ("signature", "Email signature"),
    ("status_message", "Status message"),
];

/// Words used for initial text values and for typed input.
pub const LEXICON: &[&str] = &[
    "amber", "birch", "cedar", "delta", "ember", "fjord", "garnet", "harbor", "indigo", "juniper",
    "kestrel", "lumen", "meadow", "nimbus", "orchid", "prairie",
];

/// Generates a connected app whose navigation graph is symmetric: every
/// link A→B is paired with a link B→A.
///
/// The output is a pure function of `(name, params, seed)`.
pub fn generate_app(name: &str, params: AppGenParams, seed: u64) -> Result<SimAppSpec, SimError> {
    let AppGenParams {
        n_screens,
        elements_per_screen,
        n_fields,
    } = params;
    if n_screens < 2 {
        return Err(SimError::InvalidParams(format!(
            "n_screens must be at least 2, got {n_screens}"
        )));
    }
    if elements_per_screen < 2 {
        return Err(SimError::InvalidParams(format!(
            "elements_per_screen must be at least 2, got {elements_per_screen}"
        )));
    }
    if elements_per_screen > 6 {
        return Err(SimError::InvalidParams(format!(
            "elements_per_screen must be at most 6, got {elements_per_screen}"
        )));
    }
    if n_fields > n_screens * elements_per_screen {
        return Err(SimError::InvalidParams(format!(
            "n_fields ({n_fields}) exceeds the content slots available ({})",
            n_screens * elements_per_screen
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"generate_app", name.as_bytes()]));

    // Titles.
    let mut pool: Vec<&str> = SCREEN_TITLES.to_vec();
    pool.shuffle(&mut rng);
    let titles: Vec<String> = (0..n_screens)
        .map(|i| {
            if i == 0 {
                "Home".to_string()
            } else {
                let base = pool[(i - 1) % pool.len()];
                let round = (i - 1) / pool.len();
                if round == 0 {
                    base.to_string()
                } else {
                    format!("{base} {}", round + 1)
                }
            }
        })
        .collect();

    // Spanning tree with bounded fan-out, plus a few cross links; all symmetric.
    const MAX_DEGREE: usize = 5;
    let mut adj: Vec<BTreeSet<ScreenId>> = vec![BTreeSet::new(); n_screens];
    for child in 1..n_screens {
        let candidates: Vec<usize> = (0..child)
            .filter(|&p| adj[p].len() < MAX_DEGREE - 1)
            .collect();
        let parent = if candidates.is_empty() {
            child - 1
        } else {
            candidates[rng.gen_range(0..candidates.len())]
        };
        adj[parent].insert(child as ScreenId);
        adj[child].insert(parent as ScreenId);
    }
    for _ in 0..n_screens / 4 {
        let a = rng.gen_range(0..n_screens);
        let b = rng.gen_range(0..n_screens);
        if a != b && adj[a].len() < MAX_DEGREE && adj[b].len() < MAX_DEGREE {
            adj[a].insert(b as ScreenId);
            adj[b].insert(a as ScreenId);
        }
    }

    // Data fields, mixed toggles and text.
    let mut toggles: Vec<&(&str, &str)> = TOGGLE_FIELDS.iter().collect();
    let mut texts: Vec<&(&str, &str)> = TEXT_FIELDS.iter().collect();
    toggles.shuffle(&mut rng);
    texts.shuffle(&mut rng);
    let mut fields: Vec<(String, String, FieldValue)> = Vec::with_capacity(n_fields);
    let (mut ti, mut xi) = (0usize, 0usize);
    for i in 0..n_fields {
        let use_toggle = rng.gen_bool(0.6);
        if use_toggle {
            let (key, label) = toggles[ti % toggles.len()];
            let round = ti / toggles.len();
            ti += 1;
            let (key, label) = suffixed(key, label, round);
            fields.push((key, label, FieldValue::Bool(rng.gen_bool(0.5))));
        } else {
            let (key, label) = texts[xi % texts.len()];
            let round = xi / texts.len();
            xi += 1;
            let (key, label) = suffixed(key, label, round);
            let word = LEXICON[rng.gen_range(0..LEXICON.len())];
            fields.push((key, label, FieldValue::Text(word.to_string())));
        }
        debug_assert_eq!(fields.len(), i + 1);
    }

    // Place each field on a screen with a free content slot.
    let mut content: Vec<Vec<(ElementKind, String, bool)>> = vec![Vec::new(); n_screens];
    for (key, label, value) in &fields {
        let open: Vec<usize> = (0..n_screens)
            .filter(|&s| content[s].len() < elements_per_screen)
            .collect();
        let screen = open[rng.gen_range(0..open.len())];
        let kind = match value {
            FieldValue::Bool(_) => ElementKind::Toggle { field: key.clone() },
            FieldValue::Text(_) => ElementKind::Input { field: key.clone() },
        };
        content[screen].push((kind, label.clone(), true));
    }
    for (s, slots) in content.iter_mut().enumerate() {
        let mut k = 0;
        while slots.len() < elements_per_screen {
            let interactable = rng.gen_bool(0.5);
            let label = if interactable {
                format!("{} help {}", titles[s], k + 1)
            } else {
                format!("{} summary {}", titles[s], k + 1)
            };
            slots.push((ElementKind::Terminal, label, interactable));
            k += 1;
        }
        slots.shuffle(&mut rng);
    }

    let mut screens = Vec::with_capacity(n_screens);
    let mut nav_edges = Vec::new();
    for s in 0..n_screens {
        let mut elements = Vec::new();
        let mut next_id = 0u32;
        for (kind, label, interactable) in content[s].drain(..) {
            elements.push(UiElement {
                element_id: next_id,
                kind,
                label,
                interactable,
            });
            next_id += 1;
        }
        for &t in &adj[s] {
            elements.push(UiElement {
                element_id: next_id,
                kind: ElementKind::Nav { target_screen: t },
                label: titles[t as usize].clone(),
                interactable: true,
            });
            nav_edges.push((s as ScreenId, t));
            next_id += 1;
        }
        if s != 0 {
            elements.push(UiElement {
                element_id: next_id,
                kind: ElementKind::Back,
                label: "Back".to_string(),
                interactable: true,
            });
        }
        screens.push(SimScreenSpec {
            screen_id: s as ScreenId,
            title: titles[s].clone(),
            elements,
        });
    }
    nav_edges.sort_unstable();

    let spec = SimAppSpec {
        version: SPEC_VERSION,
        app_name: name.to_string(),
        screens,
        nav_edges,
        data_fields: fields.into_iter().map(|(k, _, v)| (k, v)).collect(),
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn suffixed(key: &str, label: &str, round: usize) -> (String, String) {
    if round == 0 {
        (key.to_string(), label.to_string())
    } else {
        (
            format!("{key}_{}", round + 1),
            format!("{label} {}", round + 1),
        )
    }
}

/// The three-app suite used by the defaults and the end-to-end examples.
pub fn default_suite(seed: u64) -> Vec<SimAppSpec> {
    [("Settings", 12usize), ("Calendar", 10), ("Notes", 9)]
        .iter()
        .enumerate()
        .map(|(i, (name, n))| {
            generate_app(
                name,
                AppGenParams {
                    n_screens: *n,
                    elements_per_screen: 3,
                    n_fields: n * 3 / 4 + 2,
                },
                seed + i as u64,
            )
            .expect("default suite parameters are valid")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_oracle_connected(spec: &SimAppSpec) -> bool {
        // Independent reachability over the element list (not nav_edges).
        let n = spec.screens.len();
        let mut undirected = vec![Vec::new(); n];
        for s in &spec.screens {
            for e in &s.elements {
                if let ElementKind::Nav { target_screen } = e.kind {
                    undirected[s.screen_id as usize].push(target_screen as usize);
                    undirected[target_screen as usize].push(s.screen_id as usize);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        while let Some(x) = stack.pop() {
            if std::mem::replace(&mut seen[x], true) {
                continue;
            }
            stack.extend(undirected[x].iter().copied());
        }
        seen.into_iter().all(|b| b)
    }

    #[test]
    fn generation_is_deterministic() {
        let p = AppGenParams {
            n_screens: 2,
            elements_per_screen: 2,
            n_fields: 1,
        };
        assert_eq!(
            generate_app("A", p, 0).unwrap(),
            generate_app("A", p, 0).unwrap()
        );
    }

    #[test]
    fn ten_screen_app_is_connected() {
        let spec = generate_app(
            "Settings",
            AppGenParams {
                n_screens: 10,
                elements_per_screen: 3,
                n_fields: 6,
            },
            1,
        )
        .unwrap();
        assert!(bfs_oracle_connected(&spec));
        for s in &spec.screens {
            assert!(s
                .elements
                .iter()
                .any(|e| matches!(e.kind, ElementKind::Nav { .. })));
        }
    }

    #[test]
    fn rejects_too_few_screens() {
        let err = generate_app(
            "A",
            AppGenParams {
                n_screens: 1,
                elements_per_screen: 2,
                n_fields: 1,
            },
            0,
        );
        assert!(matches!(err, Err(SimError::InvalidParams(_))));
        let err = generate_app(
            "A",
            AppGenParams {
                n_screens: 3,
                elements_per_screen: 1,
                n_fields: 1,
            },
            0,
        );
        assert!(matches!(err, Err(SimError::InvalidParams(_))));
    }

    #[test]
    fn nav_graph_is_symmetric() {
        for seed in 0..20 {
            let spec = generate_app(
                "Notes",
                AppGenParams {
                    n_screens: 25,
                    elements_per_screen: 3,
                    n_fields: 10,
                },
                seed,
            )
            .unwrap();
            let edges: BTreeSet<_> = spec.nav_edges.iter().copied().collect();
            for &(a, b) in &edges {
                assert!(edges.contains(&(b, a)));
            }
            assert!(bfs_oracle_connected(&spec));
        }
    }

    #[test]
    fn json_round_trip_validates() {
        let spec = generate_app("Clock", AppGenParams::default(), 3).unwrap();
        let back = SimAppSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        let mut broken = spec.clone();
        broken.nav_edges.pop();
        assert!(SimAppSpec::from_json(&broken.to_json()).is_err());
    }
}
