// Own test binary: it changes the process environment.

use adaptivepq::topology::{Topology, TOPOLOGY_ENV};

#[test]
fn env_override_wins_and_bad_specs_are_ignored() {
    std::env::set_var(TOPOLOGY_ENV, "nodes=4,cpn=3");
    let t = Topology::discover();
    assert!(t.is_simulated());
    assert_eq!(t.node_count(), 4);
    assert_eq!(t.context_count(), 12);
    assert_eq!(t.node_of(7), Some(2));

    std::env::set_var(TOPOLOGY_ENV, "nodes=0,cpn=3");
    let t = Topology::discover();
    assert!(t.node_count() >= 1);
    assert!(t.context_count() >= 1);

    std::env::remove_var(TOPOLOGY_ENV);
    assert_eq!(Topology::discover(), t);
}
