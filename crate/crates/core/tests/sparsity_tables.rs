use entmax_attention::{build_tables, mask_density, BlockMask};
use proptest::prelude::*;

fn masks() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (1usize..20, 1usize..140).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::collection::vec(any::<bool>(), c), r)
    })
}

proptest! {
    #[test]
    fn tables_round_trip(rows in masks()) {
        let mask = BlockMask::from_rows(&rows).unwrap();
        let t = build_tables(&mask);
        prop_assert_eq!(&t.to_mask(), &mask);
        prop_assert_eq!(&t.to_mask_from_key_table(), &mask);
        prop_assert_eq!(t.active_blocks(), mask.count_ones());
        for i in 0..mask.t_r() {
            prop_assert!(t.key_blocks(i).windows(2).all(|w| w[0] < w[1]));
            for &j in t.key_blocks(i) {
                prop_assert!(t.query_blocks(j as usize).contains(&(i as u32)));
            }
        }
        for j in 0..mask.t_c() {
            prop_assert!(t.query_blocks(j).windows(2).all(|w| w[0] < w[1]));
        }
        let expect = mask.count_ones() as f64 / (mask.t_r() * mask.t_c()) as f64;
        prop_assert_eq!(mask_density(&mask), expect);
    }

    #[test]
    fn text_grid_round_trip(rows in masks()) {
        let mask = BlockMask::from_rows(&rows).unwrap();
        let parsed: BlockMask = mask.to_string().parse().unwrap();
        prop_assert_eq!(parsed, mask);
    }
}

#[test]
fn full_three_by_three() {
    let t = build_tables(&BlockMask::full(3, 3));
    for k in 0..3 {
        assert_eq!(t.key_blocks(k), &[0, 1, 2]);
        assert_eq!(t.query_blocks(k), &[0, 1, 2]);
    }
}
