//! The network listener. It only translates HTTP to requests on the main
//! thread's queue and back.

use std::io::Read;

use crossbeam_channel::{bounded, Sender};
use tiny_http::{Header, Method, Response};

use dabxml_core::dabml::{serialize_envelope, DabmlMessage, Payload};

use crate::server::Request;

const MAX_BODY: u64 = 1 << 20;

struct Reply {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

impl Reply {
    fn xml(status: u16, body: Vec<u8>) -> Self {
        Self { status, content_type: "text/xml; charset=utf-8", body }
    }

    fn text(status: u16, body: impl Into<String>) -> Self {
        Self { status, content_type: "text/plain; charset=utf-8", body: body.into().into_bytes() }
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name, value).expect("static header")
}

pub(crate) fn serve_http(server: &tiny_http::Server, requests: &Sender<Request>) {
    for mut request in server.incoming_requests() {
        let reply = route(&mut request, requests);
        let response = Response::from_data(reply.body)
            .with_status_code(reply.status)
            .with_header(header("Content-Type", reply.content_type))
            .with_header(header("Access-Control-Allow-Origin", "*"))
            .with_header(header("Access-Control-Allow-Methods", "GET, POST, OPTIONS"))
            .with_header(header("Access-Control-Allow-Headers", "Content-Type"));
        if let Err(e) = request.respond(response) {
            log::debug!("http respond: {e}");
        }
    }
}

fn ask<T>(requests: &Sender<Request>, build: impl FnOnce(Sender<T>) -> Request) -> Option<T> {
    let (tx, rx) = bounded(1);
    requests.send(build(tx)).ok()?;
    rx.recv().ok()
}

fn unavailable() -> Reply {
    Reply::text(503, "server is shutting down\n")
}

fn route(request: &mut tiny_http::Request, requests: &Sender<Request>) -> Reply {
    let path = request.url().split('?').next().unwrap_or("").to_owned();
    match (request.method(), path.as_str()) {
        (Method::Options, _) => Reply::text(204, ""),
        (Method::Post, "/dabml") => {
            let mut body = Vec::new();
            if let Err(e) = request.as_reader().take(MAX_BODY + 1).read_to_end(&mut body) {
                return Reply::text(400, format!("cannot read request body: {e}\n"));
            }
            if body.len() as u64 > MAX_BODY {
                let msg = DabmlMessage::error("RequestTooLarge", format!("limit is {MAX_BODY} bytes"));
                return Reply::xml(413, serialize_envelope(&msg));
            }
            match ask(requests, |reply| Request::Dabml { body, reply }) {
                Some(reply) => Reply::xml(if reply.rejected { 400 } else { 200 }, reply.bytes),
                None => unavailable(),
            }
        }
        (Method::Get, "/events") => match ask(requests, |reply| Request::Events { reply }) {
            Some(lines) => Reply::text(200, lines.iter().map(|l| format!("{l}\n")).collect::<String>()),
            None => unavailable(),
        },
        (Method::Get, "/state") => match ask(requests, |reply| Request::State { reply }) {
            Some(status) => Reply::xml(200, serialize_envelope(&DabmlMessage::ok(Payload::ReceiverState(status)))),
            None => unavailable(),
        },
        (_, "/dabml" | "/events" | "/state") => Reply::text(405, "method not allowed\n"),
        _ => Reply::text(404, "not found\n"),
    }
}
