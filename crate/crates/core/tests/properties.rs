use std::collections::HashMap;

use proptest::prelude::*;

use atomtab::{ArenaId, AtomHandle, AtomTable, TableConfig};

#[derive(Clone, Debug)]
enum Op {
    Intern(u8),
    Drop(usize),
    Push(usize),
    Pop,
    Collect,
    Resize,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u8..24).prop_map(Op::Intern),
        3 => any::<usize>().prop_map(Op::Drop),
        2 => any::<usize>().prop_map(Op::Push),
        1 => Just(Op::Pop),
        1 => Just(Op::Collect),
        1 => Just(Op::Resize),
    ]
}

fn name(k: u8) -> Vec<u8> {
    format!("atom-{k}").into_bytes()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Against a model of counted and arena-held handles: a name maps to one
    /// handle while anything keeps it alive, and kept atoms keep their name.
    #[test]
    fn table_matches_model(ops in prop::collection::vec(op(), 1..120)) {
        let table = AtomTable::new(TableConfig { initial_buckets: 2, ..TableConfig::manual() });
        let ctx = table.register_thread();
        let mut counted: Vec<(AtomHandle, u8)> = Vec::new();
        let mut arena: Vec<(AtomHandle, u8)> = Vec::new();

        for op in ops {
            match op {
                Op::Intern(k) => {
                    let h = ctx.intern(&name(k)).unwrap();
                    if let Some((prev, _)) = counted.iter().chain(&arena).find(|(_, n)| *n == k) {
                        prop_assert_eq!(*prev, h);
                    }
                    counted.push((h, k));
                }
                Op::Drop(i) if !counted.is_empty() => {
                    let (h, _) = counted.swap_remove(i % counted.len());
                    ctx.unregister_atom(h).unwrap();
                }
                Op::Push(i) if !counted.is_empty() => {
                    let entry = counted[i % counted.len()];
                    ctx.arena_push(ArenaId::DEFAULT, entry.0.raw()).unwrap();
                    arena.push(entry);
                }
                Op::Pop if !arena.is_empty() => {
                    let (h, _) = arena.pop().unwrap();
                    prop_assert_eq!(ctx.arena_pop(ArenaId::DEFAULT).unwrap(), h.raw());
                }
                Op::Collect => {
                    table.run_agc();
                }
                Op::Resize => {
                    table.resize_atom_table().unwrap();
                }
                _ => {}
            }
            for (h, k) in counted.iter().chain(&arena) {
                prop_assert_eq!(table.name_of(*h).unwrap(), name(*k));
            }
        }
        let report = table.audit();
        prop_assert!(report.is_clean());
        let mut alive: HashMap<u8, AtomHandle> = HashMap::new();
        for (h, k) in counted.iter().chain(&arena) {
            alive.insert(*k, *h);
        }
        for (k, h) in alive {
            prop_assert_eq!(report.names.get(&name(k)).map(Vec::as_slice), Some(&[h][..]));
        }
    }

    /// Two cycles with no roots left reclaim every atom.
    #[test]
    fn unrooted_atoms_are_reclaimed(names in prop::collection::hash_set("[a-z]{0,8}", 1..60)) {
        let table = AtomTable::new(TableConfig::manual());
        let ctx = table.register_thread();
        let total_len: usize = names.iter().map(String::len).sum();
        for n in &names {
            let h = ctx.intern(n.as_bytes()).unwrap();
            ctx.unregister_atom(h).unwrap();
        }
        let stats = table.run_agc();
        prop_assert_eq!(stats.atoms_reclaimed as usize, names.len());
        let overhead = std::mem::size_of::<atomtab::store::AtomRecord>() * names.len();
        prop_assert_eq!(stats.bytes_reclaimed as usize, total_len + overhead);
        prop_assert_eq!(table.live_atoms(), 0);
        for n in &names {
            prop_assert_eq!(ctx.find_existing(n.as_bytes()), None);
        }
    }

    /// Resizing never changes which handle a name maps to.
    #[test]
    fn resize_preserves_mapping(names in prop::collection::hash_set(".{0,6}", 1..200), initial in 1usize..16) {
        let table = AtomTable::new(TableConfig { initial_buckets: initial, ..TableConfig::manual() });
        let ctx = table.register_thread();
        let handles: Vec<_> = names.iter().map(|n| (n.clone(), ctx.intern(n.as_bytes()).unwrap())).collect();
        for _ in 0..3 {
            table.resize_atom_table().unwrap();
        }
        for (n, h) in &handles {
            prop_assert_eq!(ctx.find_existing(n.as_bytes()), Some(*h));
        }
        prop_assert!(table.audit().is_clean());
    }
}
