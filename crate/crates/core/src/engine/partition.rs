// SPDX-License-Identifier: Apache-2.0

//! Key partitioning across parallel instances of the next stage.

use crate::engine::EngineError;
use crate::model::TaskId;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Index of the downstream instance for `key`. The same function is used at
/// every stage, so a key always lands on the same instance number.
pub fn partition(key: &str, instances: usize) -> usize {
    if instances <= 1 {
        return 0;
    }
    (fnv1a(key.as_bytes()) % instances as u64) as usize
}

/// Downstream task for `key`.
pub fn route(key: &str, downstream: &[TaskId]) -> Result<TaskId, EngineError> {
    if downstream.is_empty() {
        return Err(EngineError::NoDownstream);
    }
    Ok(downstream[partition(key, downstream.len())])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn stable_and_in_range() {
        for i in 0..200 {
            let k = format!("cam-{i}");
            let p = partition(&k, 7);
            assert!(p < 7);
            assert_eq!(p, partition(&k, 7));
        }
        assert_eq!(partition("x", 0), 0);
        assert_eq!(partition("x", 1), 0);
    }

    #[test]
    fn route_examples() {
        assert_eq!(route("cam-3", &[TaskId(7)]), Ok(TaskId(7)));
        assert_eq!(route("cam-3", &[]), Err(EngineError::NoDownstream));
        let crs: Vec<TaskId> = (0..10).map(TaskId).collect();
        let mut load = [0usize; 10];
        for cam in 0..111 {
            let key = format!("cam-{cam}");
            let d = route(&key, &crs).unwrap();
            assert_eq!(d, route(&key, &crs).unwrap());
            load[d.0 as usize] += 1;
        }
        assert_eq!(load.iter().sum::<usize>(), 111);
        assert!(*load.iter().max().unwrap() >= 12);
    }
}
