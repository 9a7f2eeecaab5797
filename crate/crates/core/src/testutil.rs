//! Single-threaded program drivers for unit tests.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ids::ProgramId;
use crate::patchprog::{run_program_once, PatchProgram, ProgramState, Stream};

/// Runs programs until all halt with empty inboxes. `pick` chooses the next
/// program among the active ones (given as indices, ascending).
pub fn drive_with<P: PatchProgram>(
    programs: &mut [P],
    mut pick: impl FnMut(&[usize], &[P]) -> usize,
) -> Vec<Stream> {
    let index: BTreeMap<ProgramId, usize> = programs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id(), i))
        .collect();
    let mut states = vec![ProgramState::default(); programs.len()];
    let mut inbox: Vec<VecDeque<Stream>> = vec![VecDeque::new(); programs.len()];
    let mut sent = Vec::new();
    loop {
        let active: Vec<usize> = (0..programs.len())
            .filter(|&i| states[i].is_active())
            .collect();
        if active.is_empty() {
            break;
        }
        let i = pick(&active, programs);
        let mut out = Vec::new();
        let inputs: Vec<Stream> = inbox[i].drain(..).collect();
        run_program_once(&mut programs[i], &mut states[i], inputs, |s| out.push(s)).unwrap();
        for s in out {
            let t = index[&s.tgt];
            states[t].on_stream();
            inbox[t].push_back(s.clone());
            sent.push(s);
        }
    }
    sent
}

/// Picks uniformly at random among active programs.
pub fn drive_random<P: PatchProgram>(programs: &mut [P], seed: u64) -> Vec<Stream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    drive_with(programs, |active, _| active[rng.gen_range(0..active.len())])
}

/// Always runs the lowest-indexed active program.
pub fn drive_in_order<P: PatchProgram>(programs: &mut [P]) -> Vec<Stream> {
    drive_with(programs, |active, _| active[0])
}
