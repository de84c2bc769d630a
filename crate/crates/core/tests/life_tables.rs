use std::path::Path;

use poolfund::mortality::load_life_table_file;
use poolfund::{cohort, MortalityTable};

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn excerpt_gives_the_same_cohorts_as_the_bundled_table() {
    let full = load_life_table_file(&data("ssa_female_period_2007.csv")).unwrap();
    let excerpt = load_life_table_file(&data("desk_female_60_119.csv")).unwrap();
    let bundled = MortalityTable::bundled();
    assert_eq!(excerpt.min_age(), 60);
    for s in [60, 65, 90, 119] {
        let c = cohort(&bundled, s).unwrap();
        assert_eq!(cohort(&full, s).unwrap().digest(), c.digest());
        assert_eq!(cohort(&excerpt, s).unwrap().digest(), c.digest());
    }
    assert!(cohort(&excerpt, 59).is_err());
}
