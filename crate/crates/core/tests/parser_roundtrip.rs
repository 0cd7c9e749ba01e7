//! Property tests of the `.ryx` surface: serialize/parse round-trip
//! identity on randomized valid documents, and crash-freedom on mutated
//! inputs.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rydsim_core::model::{
    AddressingBeam, AtomGeometry, ExperimentModel, GlobalDrive, RydbergLevel, TrapModel,
};
use rydsim_core::noise::NoiseModel;
use rydsim_core::sequence::{parse, ExperimentDocument, ScanBlock, TimedAddress, TimedDrive};
use rydsim_core::Vec3;

fn arb_positions() -> impl Strategy<Value = Vec<Vec3>> {
    // Distinct grid sites guarantee positive pairwise distances.
    let grid: Vec<Vec3> = (0..12)
        .map(|i| Vec3::new((i % 4) as f64 * 2.5, (i / 4) as f64 * 2.5, 0.0))
        .collect();
    proptest::sample::subsequence(grid, 1..=4)
}

fn arb_level() -> impl Strategy<Value = RydbergLevel> {
    prop_oneof![
        Just(RydbergLevel::preset("59D3/2").unwrap()),
        (1.0e3..1.0e7f64).prop_map(|c6| RydbergLevel::new("82D3/2", c6).unwrap()),
    ]
}

fn arb_trap() -> impl Strategy<Value = TrapModel> {
    (0.5..2.0f64, 5.0..40.0f64, 1.0..8.0f64)
        .prop_map(|(waist, depth, aspect)| TrapModel::new(waist, depth, aspect).unwrap())
}

fn arb_drives() -> impl Strategy<Value = Vec<TimedDrive>> {
    // Sequential (start, gap, duration) keeps scheduled drives
    // non-overlapping by construction; durations may be absent (templates).
    proptest::collection::vec(
        (
            0.0..0.5f64,
            0.01..1.0f64,
            proptest::option::of(0.01..1.0f64),
            0.0..3.0f64,
            -4.0..4.0f64,
        ),
        0..3,
    )
    .prop_map(|specs| {
        let mut cursor = 0.0;
        specs
            .into_iter()
            .map(|(gap, reserve, duration, rabi, detuning)| {
                let t_start = cursor + gap;
                cursor = t_start + duration.unwrap_or(reserve);
                TimedDrive {
                    t_start,
                    duration,
                    drive: GlobalDrive::new(rabi, detuning, Vec3::new(5.35, 0.0, 0.9), 0.0)
                        .unwrap(),
                }
            })
            .collect()
    })
}

fn arb_addresses() -> impl Strategy<Value = Vec<TimedAddress>> {
    proptest::collection::vec(
        (
            0.0..2.0f64,
            proptest::option::of(0.01..1.0f64),
            -4.0..4.0f64,
            0.0..20.0f64,
            0.5..2.5f64,
            prop_oneof![
                Just(Vec3::z()),
                Just(Vec3::x()),
                Just(Vec3::new(1.0, 1.0, 1.0))
            ],
        ),
        0..3,
    )
    .prop_map(|specs| {
        specs
            .into_iter()
            .map(|(t_start, duration, cx, peak, waist, axis)| TimedAddress {
                t_start,
                duration,
                beam: AddressingBeam::with_axis(Vec3::new(cx, 0.0, 0.0), peak, waist, axis)
                    .unwrap(),
            })
            .collect()
    })
}

fn arb_noise() -> impl Strategy<Value = NoiseModel> {
    (
        0.0..120.0f64,
        1..2000u64,
        0.0..0.3f64,
        0.0..0.3f64,
        0.5..1.0f64,
        any::<u32>(),
    )
        .prop_map(
            |(temperature_uk, shots, eps_g_to_r, eps_r_to_g, prep_efficiency, seed)| NoiseModel {
                temperature_uk,
                shots,
                eps_g_to_r,
                eps_r_to_g,
                prep_efficiency,
                rng_seed: seed as u64,
            },
        )
}

fn arb_document() -> impl Strategy<Value = ExperimentDocument> {
    (
        arb_positions(),
        arb_level(),
        arb_trap(),
        arb_drives(),
        arb_addresses(),
        arb_noise(),
        0.0..1.0f64,
    )
        .prop_map(
            |(positions, level, trap, drives, addresses, noise, scan_sel)| {
                let mut document = ExperimentDocument {
                    model: ExperimentModel::new(AtomGeometry::new(positions).unwrap(), level, trap),
                    drives,
                    addresses,
                    noise,
                    scan: None,
                };
                // Scan over a path that exists for this document.
                let mut candidates = vec!["noise.temperature_uk", "trap.depth_mhz"];
                if !document.drives.is_empty() {
                    candidates.push("drive.rabi_mhz");
                }
                if !document.addresses.is_empty() {
                    candidates.push("address[0].peak_shift_mhz");
                }
                if scan_sel < 0.8 {
                    let parameter = candidates[(scan_sel * 10.0) as usize % candidates.len()];
                    document.scan = Some(ScanBlock {
                        parameter: parameter.to_string(),
                        start: 0.5,
                        stop: 2.5,
                        step: 0.25,
                    });
                }
                document
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn serialize_parse_is_the_identity(document in arb_document()) {
        let text = document.serialize();
        let reparsed = parse(&text).unwrap_or_else(|e| panic!("round-trip parse failed: {e}\n{text}"));
        prop_assert_eq!(document, reparsed);
    }
}

#[test]
fn mutated_documents_never_panic_the_parser() {
    let base = "\
[atoms]
positions_um = (0,0,0); (3,0,0)
level = 59D3/2

[trap]
waist_um = 1
depth_mhz = 20

[drive]
t_start_us = 0
duration_us = 0.5
rabi_mhz = 1.0
detuning_mhz = -0.5

[address]
center_um = (3,0,0)
peak_shift_mhz = 10
waist_um = 1.3

[noise]
temperature_uk = 50
shots = 100

[scan]
parameter = drive.duration_us
start = 0
stop = 2
step = 0.02
";
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let charset: Vec<char> = "[]()=;,._-#abgkrz0123456789 \t\u{b5}".chars().collect();
    let mut accepted = 0usize;
    for _ in 0..2000 {
        let mut text: Vec<char> = base.chars().collect();
        for _ in 0..rng.random_range(1..6) {
            let pos = rng.random_range(0..text.len());
            match rng.random_range(0..3) {
                0 => text[pos] = charset[rng.random_range(0..charset.len())],
                1 => {
                    text.insert(pos, charset[rng.random_range(0..charset.len())]);
                }
                _ => {
                    text.remove(pos);
                }
            }
        }
        let mutated: String = text.into_iter().collect();
        // Must return a document or a diagnostic, never panic.
        if parse(&mutated).is_ok() {
            accepted += 1;
        }
    }
    // Sanity: some mutations are harmless (comments, whitespace).
    assert!(accepted > 0);
}
