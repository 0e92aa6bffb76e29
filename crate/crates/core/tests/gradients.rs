mod support;

use metamf::dataset::{Chunk, UserShard};
use metamf::metanet::Variant;

use support::gradcheck::{check_device, check_server, tiny_theta};

fn tiny_shards() -> metamf::dataset::ShardSet {
    support::shards_of(&support::dense_table(2, 3, 21), 0)
}

fn full_batch(shard: &UserShard) -> Vec<(usize, f64)> {
    shard.train.iter().chain(shard.chunk(Chunk::Valid)).copied().collect()
}

#[test]
fn device_gradient_matches_finite_differences() {
    let shards = tiny_shards();
    for variant in [Variant::Full, Variant::Si, Variant::Sm] {
        let theta = tiny_theta(&support::tiny_dims(), variant, 3);
        for shard in shards.iter() {
            let report = check_device(&theta, shard, &full_batch(shard));
            assert!(report.passed(), "{variant}: {report:?}");
        }
    }
}

#[test]
fn server_gradient_matches_finite_differences() {
    let shards = tiny_shards();
    for (variant, seed) in [(Variant::Full, 4), (Variant::Si, 5), (Variant::Sm, 6)] {
        let theta = tiny_theta(&support::tiny_dims(), variant, seed);
        let users: Vec<_> = shards.iter().map(|s| (s, full_batch(s))).collect();
        let report = check_server(&theta, &users, 1e-3);
        assert!(report.passed(), "{variant}: {report:?}");
        assert_eq!(report.checked, theta.param_count());
    }
}
