mod common;

use proptest::prelude::*;
use sdata::syntax::{parse_expr, parse_flow, parse_proc_flow, parse_simple_type, parse_size};
use sdata_core::size::{eval_size, normalize_size, SizeValue};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn size_expr_reparses(e in common::size_expr()) {
        prop_assert_eq!(parse_size(&e.to_string()).unwrap(), e);
    }

    #[test]
    fn flow_reparses(f in common::actor_flow()) {
        prop_assert_eq!(parse_flow(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn proc_flow_reparses(f in common::proc_flow()) {
        prop_assert_eq!(parse_proc_flow(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn type_reparses(t in common::simple_type()) {
        prop_assert_eq!(parse_simple_type(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn expr_reparses(e in common::expr()) {
        let text = e.to_string();
        let back = parse_expr(&text).map_err(|d| TestCaseError::fail(format!("{}\n{}", text, d)))?;
        prop_assert_eq!(back, e, "{}", text);
    }

    #[test]
    fn program_reparses(n in common::network()) {
        let text = sdata::print_program(&n);
        let back = sdata::parse_program(&text).map_err(|d| TestCaseError::fail(format!("{}\n{}", text, d[0])))?;
        prop_assert_eq!(sdata::print_program(&back), text);
        prop_assert_eq!(back, n);
    }

    #[test]
    fn normal_form_agrees_with_oracle(e in common::size_expr(), v in common::valuation()) {
        let nf = normalize_size(&e).unwrap();
        let want = common::oracle_eval(&e, &v);
        let got = match eval_size(nf.expr(), &v).unwrap() {
            SizeValue::Finite(n) => Some(n as u128),
            SizeValue::Infinite => None,
        };
        prop_assert_eq!(got, want, "{} ~> {}", e, nf);
    }
}
