mod support;

#[test]
fn top_k_matches_brute_force() {
    support::retrieval_exactness(100, 7).unwrap();
}
