//! Serves the mock world over HTTP and drives it through the HTTP transport,
//! the same path a real model server would take.

use std::sync::Arc;

use synthpipe::gateway::http::HttpTransport;
use synthpipe::gateway::wire::serve;
use synthpipe::gateway::{BackendEndpoint, CapabilityKind, Gateway, GenRequest, MockWorld, Transport};
use synthpipe::model::Canvas;

fn main() {
    let world: Arc<dyn Transport> = Arc::new(MockWorld::new(5));
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());

    let srv = Arc::clone(&server);
    std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            let r = serve(world.as_ref(), req.method().as_str(), req.url(), &body);
            let _ = req.respond(tiny_http::Response::from_data(r.body).with_status_code(r.status));
        }
    });

    let transport: Arc<dyn Transport> = Arc::new(HttpTransport::new(None));
    let gateway = CapabilityKind::ALL
        .into_iter()
        .fold(Gateway::new(), |g, kind| g.route(BackendEndpoint::new(kind, url.as_str()), Arc::clone(&transport)));

    let images = gateway
        .text_to_image(GenRequest {
            prompt: "a photo of a dog in a park".into(),
            canvas: Canvas::new(256, 192).unwrap(),
            seed: 9,
            candidates: 1,
        })
        .unwrap();
    println!("{url} generated {}", images[0].id());
    println!("caption over http: {}", gateway.caption(&images[0]).unwrap());
    server.unblock();
}
