use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use adaptivepq::pqcore::{SkipListPq, SprayParams};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Insert(u64, u64),
    DeleteMin,
}

fn ops(range: u64) -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            3 => (1..=range, any::<u64>()).prop_map(|(k, v)| Op::Insert(k, v)),
            2 => Just(Op::DeleteMin),
        ],
        0..400,
    )
}

proptest! {
    #[test]
    fn exact_matches_heap_oracle(seq in ops(200), seed in any::<u64>(), levels in 1usize..=32) {
        let q = SkipListPq::new(levels, seed).unwrap();
        let mut heap = BinaryHeap::new();
        let mut keys = BTreeMap::new();
        for op in seq {
            match op {
                Op::Insert(k, v) => {
                    let fresh = !keys.contains_key(&k);
                    if fresh {
                        keys.insert(k, v);
                        heap.push(Reverse(k));
                    }
                    prop_assert_eq!(q.insert(k, v).unwrap(), fresh);
                }
                Op::DeleteMin => {
                    let expect = heap.pop().map(|Reverse(k)| (k, keys.remove(&k).unwrap()));
                    prop_assert_eq!(q.delete_min(), expect);
                }
            }
        }
        prop_assert_eq!(q.len(), keys.len());
        let report = q.audit().unwrap();
        prop_assert_eq!(report.live, keys.len());
        prop_assert_eq!(q.snapshot(), keys.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn spray_returns_a_present_entry(seq in ops(300), seed in any::<u64>(), p in 1usize..=16) {
        let q = SkipListPq::new(16, seed).unwrap();
        let params = SprayParams::new(p);
        let mut keys = BTreeMap::new();
        for op in seq {
            match op {
                Op::Insert(k, v) => {
                    let fresh = !keys.contains_key(&k);
                    if fresh {
                        keys.insert(k, v);
                    }
                    prop_assert_eq!(q.insert(k, v).unwrap(), fresh);
                }
                Op::DeleteMin => match q.delete_min_spray(&params) {
                    Some((k, v)) => {
                        let rank = keys.range(..k).count() + 1;
                        prop_assert_eq!(keys.remove(&k), Some(v));
                        prop_assert!(rank <= params.rank_bound());
                    }
                    None => prop_assert!(keys.is_empty()),
                },
            }
        }
        prop_assert_eq!(q.audit().unwrap().live, keys.len());
    }
}
