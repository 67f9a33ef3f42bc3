const https = require('https');

function send(url, body) {
  return https.request(url + '?q=' + body);
}

module.exports = { send };
