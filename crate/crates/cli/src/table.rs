use bankflow_core::{InboxEntry, RequestView};

fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

pub fn queue(views: &[RequestView]) -> String {
    if views.is_empty() {
        return "(queue is empty)\n".into();
    }
    let rows = views
        .iter()
        .map(|v| {
            vec![
                v.request_id.clone(),
                v.customer_id.clone(),
                v.kind.to_string(),
                v.amount.to_string(),
                v.currency.clone(),
                v.submitted_at.to_string(),
                v.current_authority_limit.to_string(),
            ]
        })
        .collect();
    render(
        &[
            "REQUEST",
            "CUSTOMER",
            "KIND",
            "AMOUNT",
            "CCY",
            "SUBMITTED",
            "TIER LIMIT",
        ],
        rows,
    )
}

pub fn inbox(entries: &[InboxEntry]) -> String {
    if entries.is_empty() {
        return "(inbox is empty)\n".into();
    }
    let rows = entries
        .iter()
        .map(|e| {
            vec![
                e.event.event_seq.to_string(),
                e.event.occurred_at.to_string(),
                e.event.topic.clone(),
                e.event.subject_ref.clone().unwrap_or_else(|| "-".into()),
                e.delivery.channel.to_string(),
                e.delivery.status.as_str().to_string(),
                e.delivery.attempts.to_string(),
            ]
        })
        .collect();
    render(
        &[
            "SEQ", "AT", "TOPIC", "SUBJECT", "CHANNEL", "STATUS", "ATTEMPTS",
        ],
        rows,
    )
}
