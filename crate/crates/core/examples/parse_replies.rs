//! Feeds loosely formatted model replies through the structured parsers.

use synthpipe::prompt::{format_candidates, parse_box_candidates, parse_generation_prompts, parse_scene_specs, parse_visual_features};

fn main() {
    let features = parse_visual_features("1. reddish-brown fur\n2. white face markings\n3. ringed tail").unwrap();
    println!("features: {:?}", features.phrases());

    let prompts = parse_generation_prompts("Sure, here are 2 prompts:\n1. a red panda on a mossy log\n2. a red panda eating bamboo,\n   soft morning light").unwrap();
    println!("prompts: {prompts:?}");

    let scenes = parse_scene_specs(
        "{'background': ['snowy forest', 'bamboo grove'], \
          'objects': [['pine tree', 'sled'], ['bamboo', 'stone lantern']], \
          'description': ['a red panda under a pine tree', 'a red panda among bamboo']}",
    )
    .unwrap();
    for s in &scenes {
        println!("scene: {} {:?}", s.background, s.objects);
    }

    // single quotes, bare keys and leading chatter are all tolerated
    let reply = "Sure! Return Results: {\"label\": 'cat', \"box\": [343.23, 176.29, 467.23, 353.13], \
                 \"relationship\": 'sitting next to the dog.'}\n{label: 'rocks', box: [200, 50, 300, 150], \
                 relationship: 'near the cabin'}\n{label: 'broken', box: [1, 2]}";
    let parsed = parse_box_candidates(reply).unwrap();
    println!("{} candidates, {} skipped", parsed.candidates.len(), parsed.skipped);
    println!("{}", format_candidates(&parsed.candidates));
}
