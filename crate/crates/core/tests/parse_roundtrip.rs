use multising::cli::parse_observable;
use proptest::prelude::*;

fn monomial() -> impl Strategy<Value = String> {
    (
        prop_oneof![Just(String::new()), (-50.0f64..50.0).prop_map(|c| format!("{c} ")), (1u32..9).prop_map(|k| format!("{k}e-3*"))],
        prop::collection::vec(1u64..40, 1..4),
    )
        .prop_map(|(coeff, idx)| {
            let spins: Vec<String> = idx.iter().map(|i| format!("s[{i}]")).collect();
            format!("{coeff}{}", spins.join("*"))
        })
}

fn expression() -> impl Strategy<Value = String> {
    (monomial(), prop::collection::vec((prop::bool::ANY, monomial()), 0..4)).prop_map(|(head, tail)| {
        let mut s = head;
        for (minus, m) in tail {
            s.push_str(if minus { " - " } else { " + " });
            s.push_str(&m);
        }
        s
    })
}

proptest! {
    #[test]
    fn printing_then_parsing_is_identity(text in expression()) {
        if let Ok(f) = parse_observable(&text) {
            let again = parse_observable(&f.to_string()).unwrap();
            prop_assert_eq!(again, f);
        }
    }

    #[test]
    fn garbage_never_panics(text in "[s0-9\\[\\]*+ .e-]{0,24}") {
        let _ = parse_observable(&text);
    }
}

#[test]
fn printed_form_is_canonical() {
    let f = parse_observable("s[3]*s[1] + 2 s[1]*s[3] - 0.5*s[2]").unwrap();
    assert_eq!(f.to_string(), "3.0*s[1]*s[3] - 0.5*s[2]");
}
