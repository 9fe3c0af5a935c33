//! Synthetic 50-page / 80-claim corpus for end-to-end tests. Every page has
//! a unique two-word title and a category sentence; claims either restate a
//! page's category (supported), assert another page's category (refuted), or
//! mention an attribute the corpus never covers (not enough info). The first
//! ten claims are the held-in sanity subset.

use factforge::corpus::{ClaimRecord, PageStore, RelationLabel, WikiPage};

const FIRST: [&str; 10] =
    ["Amber", "Birch", "Cedar", "Dovre", "Ember", "Fjord", "Grove", "Harbor", "Ivory", "Juniper"];
const SECOND: [&str; 5] = ["Atlas", "Beacon", "Circuit", "Delta", "Ensign"];

const CATEGORIES: [&str; 50] = [
    "violinist",
    "archipelago",
    "observatory",
    "distillery",
    "lighthouse",
    "vineyard",
    "glacier",
    "monastery",
    "shipyard",
    "orchard",
    "planetarium",
    "foundry",
    "aqueduct",
    "cathedral",
    "windmill",
    "brewery",
    "citadel",
    "estuary",
    "quarry",
    "viaduct",
    "arboretum",
    "catacomb",
    "funicular",
    "hatchery",
    "icebreaker",
    "jetty",
    "kiln",
    "labyrinth",
    "mangrove",
    "obelisk",
    "pagoda",
    "quay",
    "reservoir",
    "sanatorium",
    "tannery",
    "velodrome",
    "waterwheel",
    "zeppelin",
    "ziggurat",
    "amphitheater",
    "bastion",
    "causeway",
    "derrick",
    "escarpment",
    "fortress",
    "greenhouse",
    "harpsichord",
    "isthmus",
    "junction",
    "kelp",
];

const PLACES: [&str; 10] =
    ["Norway", "Chile", "Kenya", "Laos", "Malta", "Peru", "Samoa", "Tonga", "Cyprus", "Belize"];

pub fn title(i: usize) -> String {
    format!("{} {}", FIRST[i / 5], SECOND[i % 5])
}

fn category(i: usize) -> &'static str {
    CATEGORIES[i]
}

/// The category a refuted claim wrongly assigns to page `i`.
fn wrong_category(i: usize) -> &'static str {
    CATEGORIES[(i + 7) % 50]
}

pub fn fixture_pages() -> PageStore {
    let mut store = PageStore::new();
    for i in 0..50 {
        let place = PLACES[i % 10];
        store
            .insert(WikiPage {
                title: title(i),
                sentences: vec![
                    format!("{} is a {} based in {}.", title(i), category(i), place),
                    format!("{} was established in {}.", title(i), 1900 + 2 * i),
                    format!("Many visitors from {} admire it.", place),
                ],
            })
            .unwrap();
    }
    store
}

fn supports(id: i64, page: usize) -> ClaimRecord {
    ClaimRecord {
        id,
        text: format!("{} is a {}.", title(page), category(page)),
        label: Some(RelationLabel::Supports),
        evidence_groups: vec![vec![(title(page), 0)]],
        attack_type: None,
    }
}

fn refutes(id: i64, page: usize) -> ClaimRecord {
    ClaimRecord {
        id,
        text: format!("{} is a {}.", title(page), wrong_category(page)),
        label: Some(RelationLabel::Refutes),
        evidence_groups: vec![vec![(title(page), 0)]],
        attack_type: None,
    }
}

fn unknown(id: i64, page: usize) -> ClaimRecord {
    ClaimRecord {
        id,
        text: format!("{} has a famous mascot.", title(page)),
        label: Some(RelationLabel::NotEnoughInfo),
        evidence_groups: vec![],
        attack_type: None,
    }
}

/// 80 claims: 30 supported, 30 refuted, 20 neutral. Ids 1..=10 are the
/// held-in subset (6 supported, 2 refuted, 2 neutral).
pub fn fixture_claims() -> Vec<ClaimRecord> {
    let mut claims = Vec::with_capacity(80);
    for (offset, page) in (0..6).enumerate() {
        claims.push(supports(1 + offset as i64, page));
    }
    claims.push(refutes(7, 10));
    claims.push(refutes(8, 11));
    claims.push(unknown(9, 48));
    claims.push(unknown(10, 49));
    for (offset, page) in (6..30).enumerate() {
        claims.push(supports(11 + offset as i64, page));
    }
    for (offset, page) in (12..40).enumerate() {
        claims.push(refutes(35 + offset as i64, page));
    }
    for (offset, page) in (30..48).enumerate() {
        claims.push(unknown(63 + offset as i64, page));
    }
    claims
}

pub const HELD_IN: std::ops::RangeInclusive<i64> = 1..=10;
