use super::*;

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn transfer(
    code: &str,
    receiver: &str,
    from: &str,
    to: &str,
    qty: &str,
    issuer: &str,
) -> ActionRecord {
    ActionRecord {
        code_account: code.into(),
        action_name: "transfer".into(),
        receiver: receiver.into(),
        authorizers: vec![from.into()],
        transfer_payload: Some(TransferPayload {
            from: from.into(),
            to: to.into(),
            quantity: qty.parse().unwrap(),
            symbol: "EOS".into(),
            issuer: issuer.into(),
        }),
    }
}

fn true_eos(from: &str, to: &str, qty: &str) -> ActionRecord {
    transfer(EOSIO_TOKEN, EOSIO_TOKEN, from, to, qty, EOSIO_TOKEN)
}

fn fake_eos(from: &str, to: &str, qty: &str) -> ActionRecord {
    transfer("fakeissuer", "fakeissuer", from, to, qty, "fakeissuer")
}

fn call(code: &str, action: &str, auth: &str) -> ActionRecord {
    ActionRecord {
        code_account: code.into(),
        action_name: action.into(),
        receiver: code.into(),
        authorizers: vec![auth.into()],
        transfer_payload: None,
    }
}

fn tx(id: &str, t: i64, actions: Vec<ActionRecord>) -> Result<TransactionRecord, AttackError> {
    Ok(TransactionRecord {
        tx_id: id.into(),
        block_time: t,
        actions,
    })
}

fn cfg() -> AttackConfig {
    AttackConfig::default()
}

#[test]
fn true_transfers_only_yield_nothing() {
    let log = vec![
        tx("a", 1, vec![true_eos("alice", "dice", "1.0000")]),
        tx("b", 2, vec![true_eos("dice", "alice", "5.0000")]),
    ];
    assert!(flag_fake_eos_attacks(log, &set(&["dice"]), &cfg())
        .unwrap()
        .is_empty());
}

#[test]
fn fake_send_then_true_receive_is_suspicious() {
    let log = vec![
        tx("f", 10, vec![fake_eos("mallory", "dice", "10.0000")]),
        tx("r", 20, vec![true_eos("dice", "mallory", "50.0000")]),
    ];
    let flags = flag_fake_eos_attacks(log, &set(&["dice"]), &cfg()).unwrap();
    assert_eq!(flags.len(), 1);
    let f = &flags[0];
    assert_eq!(f.confidence, Confidence::Suspicious);
    assert_eq!(f.gain_estimate, Decimal::from(50));
    assert_eq!(f.victim, "dice");
    assert_eq!(f.suspects, ["mallory"]);
    assert_eq!(f.tx_ids, ["f", "r"]);
}

#[test]
fn fake_send_without_receive_stays_potential() {
    let log = vec![tx("f", 10, vec![fake_eos("mallory", "dice", "10.0000")])];
    let flags = flag_fake_eos_attacks(log, &set(&["dice"]), &cfg()).unwrap();
    assert_eq!(flags.len(), 1);
    assert_eq!(flags[0].confidence, Confidence::Potential);
}

#[test]
fn reversed_order_is_not_suspicious() {
    let log = vec![
        tx("r", 10, vec![true_eos("dice", "mallory", "50.0000")]),
        tx("f", 20, vec![fake_eos("mallory", "dice", "10.0000")]),
    ];
    let flags = flag_fake_eos_attacks(log, &set(&["dice"]), &cfg()).unwrap();
    assert!(flags.iter().all(|f| f.confidence != Confidence::Suspicious));
    assert!(flags.iter().all(|f| !f.tx_ids.contains(&"r".to_string())));
}

#[test]
fn receive_outside_window_does_not_count() {
    let log = vec![
        tx("f", 0, vec![fake_eos("mallory", "dice", "10.0000")]),
        tx(
            "r",
            DEFAULT_WINDOW_SECS + 1,
            vec![true_eos("dice", "mallory", "50.0000")],
        ),
    ];
    let flags = flag_fake_eos_attacks(log, &set(&["dice"]), &cfg()).unwrap();
    assert_eq!(flags[0].confidence, Confidence::Potential);
}

#[test]
fn ratio_gates_escalation() {
    let log = || {
        vec![
            tx("s", 5, vec![true_eos("mallory", "dice", "10.0000")]),
            tx("f", 10, vec![fake_eos("mallory", "dice", "1.0000")]),
            tx("r", 20, vec![true_eos("dice", "mallory", "50.0000")]),
        ]
    };
    let flags = flag_fake_eos_attacks(log(), &set(&["dice"]), &cfg()).unwrap();
    assert_eq!(flags[0].confidence, Confidence::Potential);
    assert_eq!(flags[0].gain_estimate, Decimal::from(40));
    let lax = AttackConfig {
        ratio_threshold: 5.0,
        ..cfg()
    };
    let flags = flag_fake_eos_attacks(log(), &set(&["dice"]), &lax).unwrap();
    assert_eq!(flags[0].confidence, Confidence::Suspicious);
}

#[test]
fn direct_call_of_victim_transfer_counts_as_fake() {
    let direct = transfer("dice", "dice", "mallory", "dice", "10.0000", EOSIO_TOKEN);
    let log = vec![
        tx("f", 10, vec![direct]),
        tx("r", 20, vec![true_eos("dice", "mallory", "30.0000")]),
    ];
    let flags = flag_fake_eos_attacks(log, &set(&["dice"]), &cfg()).unwrap();
    assert_eq!(flags[0].confidence, Confidence::Suspicious);
}

fn forwarded(from: &str, helper: &str, victim: &str, qty: &str) -> Vec<ActionRecord> {
    vec![
        true_eos(from, helper, qty),
        transfer(EOSIO_TOKEN, from, from, helper, qty, EOSIO_TOKEN),
        transfer(EOSIO_TOKEN, helper, from, helper, qty, EOSIO_TOKEN),
        transfer(EOSIO_TOKEN, victim, from, helper, qty, EOSIO_TOKEN),
    ]
}

#[test]
fn forwarded_notification_with_profit_is_suspicious() {
    let log = vec![
        tx("n", 10, forwarded("mallory", "helper", "dice", "1.0000")),
        tx("p", 11, vec![true_eos("dice", "mallory", "20.0000")]),
    ];
    let flags = flag_fake_receipt_attacks(log, &set(&["dice"]), &cfg()).unwrap();
    assert_eq!(flags.len(), 1);
    assert_eq!(flags[0].confidence, Confidence::Suspicious);
    assert_eq!(flags[0].suspects, ["mallory", "helper"]);
    assert_eq!(flags[0].gain_estimate, Decimal::from(20));
}

#[test]
fn notification_to_a_party_is_not_a_fake_receipt() {
    let log = vec![
        tx(
            "n",
            10,
            vec![
                true_eos("alice", "dice", "1.0000"),
                transfer(EOSIO_TOKEN, "dice", "alice", "dice", "1.0000", EOSIO_TOKEN),
            ],
        ),
        tx("p", 11, vec![true_eos("dice", "alice", "20.0000")]),
    ];
    assert!(flag_fake_receipt_attacks(log, &set(&["dice"]), &cfg())
        .unwrap()
        .is_empty());
}

#[test]
fn fake_receipt_to_non_victim_is_ignored() {
    let log = vec![
        tx("n", 10, forwarded("mallory", "helper", "other", "1.0000")),
        tx("p", 11, vec![true_eos("other", "mallory", "20.0000")]),
    ];
    assert!(flag_fake_receipt_attacks(log, &set(&["dice"]), &cfg())
        .unwrap()
        .is_empty());
}

fn rollback_tx(
    id: &str,
    t: i64,
    player: &str,
    casino: &str,
    bet: &str,
    win: &str,
) -> Result<TransactionRecord, AttackError> {
    tx(
        id,
        t,
        vec![
            call("attacker", "start", player),
            true_eos(player, casino, bet),
            true_eos(casino, player, win),
            call("attacker", "check", player),
        ],
    )
}

#[test]
fn four_action_win_pattern_is_flagged_with_rates() {
    let log = vec![
        rollback_tx("w1", 0, "player", "casino", "1.0000", "2.0000"),
        rollback_tx("w2", 7200, "player", "casino", "1.0000", "3.0000"),
    ];
    let flags = flag_rollback_attacks(log, &set(&["casino"])).unwrap();
    assert_eq!(flags.len(), 1);
    let f = &flags[0];
    assert_eq!(f.confidence, Confidence::Suspicious);
    assert_eq!(f.suspects, ["player", "attacker"]);
    assert_eq!(f.gain_estimate, Decimal::from(3));
    assert_eq!(f.rate_table.len(), 1);
    let r = &f.rate_table[0];
    assert_eq!((r.wins, r.attempts), (2, 2));
    assert!((r.wins_per_hour - 1.0).abs() < 1e-9);
}

#[test]
fn three_actions_never_flagged() {
    let log = vec![tx(
        "t",
        0,
        vec![
            call("attacker", "start", "player"),
            true_eos("player", "casino", "1.0000"),
            true_eos("casino", "player", "2.0000"),
        ],
    )];
    assert!(flag_rollback_attacks(log, &set(&["casino"]))
        .unwrap()
        .is_empty());
}

#[test]
fn losing_pattern_not_flagged() {
    let log = vec![rollback_tx("l", 0, "player", "casino", "2.0000", "1.0000")];
    assert!(flag_rollback_attacks(log, &set(&["casino"]))
        .unwrap()
        .is_empty());
    let log = vec![rollback_tx("n", 0, "player", "shop", "1.0000", "2.0000")];
    assert!(flag_rollback_attacks(log, &set(&["casino"]))
        .unwrap()
        .is_empty());
}

#[test]
fn permission_misuse() {
    let vulnerable: BTreeSet<(String, String)> = [("vault".to_string(), "clear".to_string())]
        .into_iter()
        .collect();
    let log = vec![
        tx("own", 0, vec![call("vault", "clear", "vault")]),
        tx("third", 1, vec![call("vault", "clear", "mallory")]),
        tx("other", 2, vec![call("vault", "deposit", "mallory")]),
    ];
    let flags = flag_permission_misuse(log, &vulnerable).unwrap();
    assert_eq!(flags.len(), 1);
    assert_eq!(flags[0].kind, AttackKind::MissingPermissionMisuse);
    assert_eq!(flags[0].tx_ids, ["third"]);
    assert_eq!(flags[0].suspects, ["mallory"]);
}

#[test]
fn reader_validates_records() {
    let good = r#"{"tx_id":"a","block_time":1,"actions":[{"code_account":"eosio.token","action_name":"transfer","receiver":"eosio.token","authorizers":["alice"],"transfer_payload":{"from":"alice","to":"bob","quantity":"1.5","symbol":"EOS","issuer":"eosio.token"}}]}"#;
    let recs = parse_log(good).unwrap();
    assert_eq!(
        recs[0].actions[0]
            .transfer_payload
            .as_ref()
            .unwrap()
            .quantity,
        "1.5".parse().unwrap()
    );
    let numeric = good.replace("\"1.5\"", "1.5");
    assert!(parse_log(&numeric).is_ok());

    let cases = [
        r#"{"tx_id":"a","block_time":1,"actions":[]}"#.to_string(),
        good.replace(r#","transfer_payload":{"from":"alice","to":"bob","quantity":"1.5","symbol":"EOS","issuer":"eosio.token"}"#, ""),
        good.replace("\"1.5\"", "\"-1\""),
        "not json".to_string(),
        format!("{}\n{}", good.replace("\"block_time\":1", "\"block_time\":5"), good),
    ];
    for c in cases {
        assert!(
            matches!(parse_log(&c), Err(AttackError::MalformedLog { .. })),
            "{c}"
        );
    }
}
