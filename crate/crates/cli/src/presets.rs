//! Experiment recipes shipped with the binary.

pub const PRESETS: [(&str, &str); 4] = [
    ("appendix-synthetic-natural", include_str!("../presets/appendix-synthetic-natural.conf")),
    ("appendix-synthetic-robust", include_str!("../presets/appendix-synthetic-robust.conf")),
    ("appendix-synthetic-fullk", include_str!("../presets/appendix-synthetic-fullk.conf")),
    ("main-synthetic", include_str!("../presets/main-synthetic.conf")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}
