//! The bundled example models, embedded at compile time.

pub const TS_EXAMPLE: &str = include_str!("../../../models/ts_example.dtsi");
pub const CHOICE_STOCH: &str = include_str!("../../../models/choice_stoch.dtsi");
pub const CHOICE_IMM: &str = include_str!("../../../models/choice_imm.dtsi");
pub const SYNC_PAIR: &str = include_str!("../../../models/sync_pair.dtsi");
pub const SSBSSPT_PAIR: &str = include_str!("../../../models/ssbsspt_pair.dtsi");
pub const QTS_F: &str = include_str!("../../../models/qts_f.dtsi");
pub const SHARED_MEMORY: &str = include_str!("../../../models/shared_memory.dtsi");
pub const SHARED_MEMORY_ABSTRACT: &str = include_str!("../../../models/shared_memory_abstract.dtsi");

/// (name, source) for every bundled model.
pub const ALL: [(&str, &str); 8] = [
    ("ts_example", TS_EXAMPLE),
    ("choice_stoch", CHOICE_STOCH),
    ("choice_imm", CHOICE_IMM),
    ("sync_pair", SYNC_PAIR),
    ("ssbsspt_pair", SSBSSPT_PAIR),
    ("qts_f", QTS_F),
    ("shared_memory", SHARED_MEMORY),
    ("shared_memory_abstract", SHARED_MEMORY_ABSTRACT),
];

pub fn get(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
